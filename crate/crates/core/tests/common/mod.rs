#![allow(dead_code)]

use pmstab_core::coremodel::CoreModel;
use pmstab_core::population::{Dataset, JointCellTable, VariableSpec};

pub const FOOT_CELLS: [([u8; 3], f64); 8] = [
    ([0, 0, 0], 0.563),
    ([1, 1, 1], 0.021),
    ([1, 1, 0], 0.062),
    ([1, 0, 1], 0.032),
    ([1, 0, 0], 0.115),
    ([0, 1, 1], 0.012),
    ([0, 1, 0], 0.177),
    ([0, 0, 1], 0.020),
];

pub fn foot_vars() -> Vec<VariableSpec> {
    ["mono", "pulse", "history"].into_iter().map(VariableSpec::binary).collect()
}

pub fn foot_table() -> JointCellTable {
    let cells = FOOT_CELLS
        .iter()
        .map(|(c, p)| (c.iter().map(|v| v.to_string()).collect(), *p))
        .collect();
    JointCellTable::normalized(foot_vars(), cells).unwrap()
}

/// Population with each cell present `round(p·n)` times, in cell order.
pub fn foot_population_exact(n: usize) -> Dataset {
    let total: f64 = FOOT_CELLS.iter().map(|c| c.1).sum();
    let mut values = Vec::new();
    for (cell, p) in FOOT_CELLS {
        let count = (p / total * n as f64).round() as usize;
        for _ in 0..count {
            values.extend(cell.iter().map(|&v| f64::from(v)));
        }
    }
    Dataset::new(foot_vars(), values).unwrap()
}

pub fn foot_model() -> CoreModel {
    CoreModel::new(
        -3.81,
        1.0,
        vec!["mono".into(), "pulse".into(), "history".into()],
        vec![1.11, 0.70, 1.95],
    )
    .unwrap()
}

/// Row index of the first occurrence of each cell in `foot_population_exact`.
pub fn cell_rows(ds: &Dataset) -> Vec<usize> {
    FOOT_CELLS
        .iter()
        .map(|(cell, _)| {
            (0..ds.n())
                .find(|&r| ds.row(r).iter().zip(cell).all(|(a, &b)| *a == f64::from(b)))
                .unwrap()
        })
        .collect()
}
