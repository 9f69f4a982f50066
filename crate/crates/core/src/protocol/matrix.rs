use std::collections::{HashMap, HashSet};

use super::{MachineId, ProtocolError, Result};

/// Machine-specific anomaly scores: one row per recording, one column per
/// machine in a fixed order.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    machines: Vec<MachineId>,
    ids: Vec<String>,
    values: Vec<f64>,
    index: HashMap<String, usize>,
}

impl ScoreMatrix {
    pub fn new(machines: Vec<MachineId>) -> Result<Self> {
        if machines.is_empty() {
            return Err(ProtocolError::NoMachines);
        }
        let mut seen = HashSet::new();
        for m in &machines {
            if !seen.insert(m) {
                return Err(ProtocolError::DuplicateMachine(m.clone()));
            }
        }
        Ok(Self {
            machines,
            ids: Vec::new(),
            values: Vec::new(),
            index: HashMap::new(),
        })
    }

    pub fn from_rows<I>(machines: Vec<MachineId>, rows: I) -> Result<Self>
    where
        I: IntoIterator<Item = (String, Vec<f64>)>,
    {
        let mut matrix = Self::new(machines)?;
        for (id, row) in rows {
            matrix.push_row(id, &row)?;
        }
        Ok(matrix)
    }

    pub fn push_row(&mut self, id: impl Into<String>, row: &[f64]) -> Result<()> {
        let id = id.into();
        if row.len() != self.machines.len() {
            return Err(ProtocolError::RowLength {
                id,
                expected: self.machines.len(),
                found: row.len(),
            });
        }
        if let Some(pos) = row.iter().position(|v| !v.is_finite()) {
            return Err(ProtocolError::NonFiniteScore {
                id,
                machine: self.machines[pos].clone(),
            });
        }
        if self.index.contains_key(&id) {
            return Err(ProtocolError::DuplicateRow(id));
        }
        self.index.insert(id.clone(), self.ids.len());
        self.ids.push(id);
        self.values.extend_from_slice(row);
        Ok(())
    }

    pub fn machines(&self) -> &[MachineId] {
        &self.machines
    }

    /// Number of machines.
    pub fn k(&self) -> usize {
        self.machines.len()
    }

    /// Number of rows.
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn machine_index(&self, machine: &MachineId) -> Option<usize> {
        self.machines.iter().position(|m| m == machine)
    }

    pub fn row(&self, id: &str) -> Option<&[f64]> {
        let k = self.k();
        self.index.get(id).map(|&r| &self.values[r * k..(r + 1) * k])
    }

    /// Rows in insertion order.
    pub fn rows(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.ids
            .iter()
            .map(String::as_str)
            .zip(self.values.chunks_exact(self.k()))
    }

    /// Keeps only the given columns, in the given order.
    pub fn select_machines(&self, machines: &[MachineId]) -> Result<ScoreMatrix> {
        let cols = machines
            .iter()
            .map(|m| {
                self.machine_index(m)
                    .ok_or_else(|| ProtocolError::MissingColumn(m.clone()))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut out = ScoreMatrix::new(machines.to_vec())?;
        for (id, row) in self.rows() {
            let picked: Vec<f64> = cols.iter().map(|&c| row[c]).collect();
            out.push_row(id, &picked)?;
        }
        Ok(out)
    }

    /// Applies `f` to every entry, e.g. a monotone transform or a negation.
    pub fn map_values(&self, f: impl Fn(f64) -> f64) -> Result<ScoreMatrix> {
        let mut out = ScoreMatrix::new(self.machines.clone())?;
        for (id, row) in self.rows() {
            let mapped: Vec<f64> = row.iter().map(|&v| f(v)).collect();
            out.push_row(id, &mapped)?;
        }
        Ok(out)
    }
}

/// Result of min-aggregating one score row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MinSelection {
    pub score: f64,
    /// Column index of the selected machine.
    pub index: usize,
    /// Another column attains the same minimum.
    pub tied: bool,
}

/// `min_m s_m(x)` together with the machine attaining it. The lowest column
/// index wins ties.
pub fn aggregate_score(row: &[f64]) -> Result<MinSelection> {
    let mut best: Option<MinSelection> = None;
    for (index, &value) in row.iter().enumerate() {
        if !value.is_finite() {
            return Err(ProtocolError::NonFiniteEntry { index, value });
        }
        match &mut best {
            None => {
                best = Some(MinSelection {
                    score: value,
                    index,
                    tied: false,
                })
            }
            Some(b) if value < b.score => {
                *b = MinSelection {
                    score: value,
                    index,
                    tied: false,
                }
            }
            Some(b) if value == b.score => b.tied = true,
            Some(_) => {}
        }
    }
    best.ok_or(ProtocolError::EmptyRow)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn machines(names: &[&str]) -> Vec<MachineId> {
        names.iter().map(|&n| MachineId::new(n)).collect()
    }

    #[test]
    fn single_machine_row() {
        let sel = aggregate_score(&[0.42]).unwrap();
        assert_eq!(
            sel,
            MinSelection {
                score: 0.42,
                index: 0,
                tied: false
            }
        );
    }

    #[test]
    fn unique_minimum() {
        let sel = aggregate_score(&[0.9, 0.3, 0.5]).unwrap();
        assert_eq!((sel.score, sel.index, sel.tied), (0.3, 1, false));
    }

    #[test]
    fn tie_goes_to_lowest_index() {
        let sel = aggregate_score(&[0.3, 0.3]).unwrap();
        assert_eq!((sel.score, sel.index, sel.tied), (0.3, 0, true));
        // a tie above the minimum is not flagged
        let sel = aggregate_score(&[0.7, 0.1, 0.7]).unwrap();
        assert_eq!((sel.index, sel.tied), (1, false));
    }

    #[test]
    fn non_finite_and_empty_rows_fail() {
        assert!(matches!(
            aggregate_score(&[0.1, f64::INFINITY]),
            Err(ProtocolError::NonFiniteEntry { index: 1, .. })
        ));
        assert_eq!(aggregate_score(&[]), Err(ProtocolError::EmptyRow));
    }

    #[test]
    fn matrix_validation() {
        assert_eq!(ScoreMatrix::new(vec![]), Err(ProtocolError::NoMachines));
        assert!(matches!(
            ScoreMatrix::new(machines(&["a", "a"])),
            Err(ProtocolError::DuplicateMachine(_))
        ));
        let mut m = ScoreMatrix::new(machines(&["a", "b"])).unwrap();
        m.push_row("r1", &[1.0, 2.0]).unwrap();
        assert!(matches!(
            m.push_row("r2", &[1.0]),
            Err(ProtocolError::RowLength { .. })
        ));
        assert!(matches!(
            m.push_row("r2", &[1.0, f64::NAN]),
            Err(ProtocolError::NonFiniteScore { .. })
        ));
        assert_eq!(
            m.push_row("r1", &[0.0, 0.0]),
            Err(ProtocolError::DuplicateRow("r1".into()))
        );
        assert_eq!(m.row("r1"), Some(&[1.0, 2.0][..]));
        assert_eq!(m.row("nope"), None);
    }

    #[test]
    fn column_selection_and_mapping() {
        let m = ScoreMatrix::from_rows(
            machines(&["a", "b", "c"]),
            vec![("r1".to_string(), vec![1.0, 2.0, 3.0])],
        )
        .unwrap();
        let picked = m.select_machines(&machines(&["c", "a"])).unwrap();
        assert_eq!(picked.row("r1"), Some(&[3.0, 1.0][..]));
        assert!(matches!(
            m.select_machines(&machines(&["d"])),
            Err(ProtocolError::MissingColumn(_))
        ));
        let neg = m.map_values(|v| -v).unwrap();
        assert_eq!(neg.row("r1"), Some(&[-1.0, -2.0, -3.0][..]));
        assert!(m.map_values(|v| v / 0.0).is_err());
    }
}
