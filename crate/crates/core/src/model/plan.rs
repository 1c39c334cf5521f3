use serde::{Deserialize, Serialize};

use crate::schema::{ColumnKind, Schema};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum StepKind {
    /// Normalized offset `v` of a continuous column.
    Value,
    /// Mixture-component probabilities `u` of a continuous column.
    Cluster,
    /// Category probabilities `d` of a discrete column.
    Discrete,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Step {
    pub kind: StepKind,
    pub column: usize,
    pub width: usize,
}

/// Generation order: one or two steps per column, in schema order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepPlan {
    pub steps: Vec<Step>,
}

impl StepPlan {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

pub fn build_step_plan(schema: &Schema, m: usize) -> StepPlan {
    let mut steps = Vec::with_capacity(2 * schema.len());
    for (column, col) in schema.columns.iter().enumerate() {
        match col.kind {
            ColumnKind::Continuous => {
                steps.push(Step {
                    kind: StepKind::Value,
                    column,
                    width: 1,
                });
                steps.push(Step {
                    kind: StepKind::Cluster,
                    column,
                    width: m,
                });
            }
            ColumnKind::Discrete => steps.push(Step {
                kind: StepKind::Discrete,
                column,
                width: col.cardinality(),
            }),
        }
    }
    StepPlan { steps }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::ColumnMeta;

    fn kinds(plan: &StepPlan) -> Vec<(StepKind, usize)> {
        plan.steps.iter().map(|s| (s.kind, s.column)).collect()
    }

    #[test]
    fn two_and_two_gives_six_steps() {
        let s = Schema::new(vec![
            ColumnMeta::continuous("c1"),
            ColumnMeta::continuous("c2"),
            ColumnMeta::discrete("d1", ["a", "b", "c"]),
            ColumnMeta::discrete("d2", ["x", "y"]),
        ])
        .unwrap();
        let plan = build_step_plan(&s, 5);
        use StepKind::*;
        assert_eq!(
            kinds(&plan),
            vec![(Value, 0), (Cluster, 0), (Value, 1), (Cluster, 1), (Discrete, 2), (Discrete, 3)]
        );
        let widths: Vec<usize> = plan.steps.iter().map(|s| s.width).collect();
        assert_eq!(widths, vec![1, 5, 1, 5, 3, 2]);
    }

    #[test]
    fn single_kind_schemas() {
        let c = Schema::new(vec![ColumnMeta::continuous("c")]).unwrap();
        assert_eq!(build_step_plan(&c, 5).len(), 2);
        let d = Schema::new(vec![
            ColumnMeta::discrete("a", ["0", "1"]),
            ColumnMeta::discrete("b", ["0", "1"]),
            ColumnMeta::discrete("c", ["0", "1"]),
        ])
        .unwrap();
        assert_eq!(build_step_plan(&d, 5).len(), 3);
    }

    #[test]
    fn interleaved_schema_keeps_order() {
        let s = Schema::new(vec![
            ColumnMeta::discrete("d", ["p", "q"]),
            ColumnMeta::continuous("c"),
        ])
        .unwrap();
        use StepKind::*;
        assert_eq!(
            kinds(&build_step_plan(&s, 3)),
            vec![(Discrete, 0), (Value, 1), (Cluster, 1)]
        );
        assert_eq!(build_step_plan(&s, 3).len(), 2 * s.n_continuous() + s.n_discrete());
    }
}
