use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ProblemSpec;

/// Default cap on the number of joint prescriptions enumerated at one step.
pub const DEFAULT_PRESCRIPTION_CAP: u128 = 10_000_000;

/// A joint prescription. `tables[i][y * |M^i| + m]` is the action of
/// controller `i` on local data `(y, m)`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct JointPrescription {
    pub index: usize,
    pub tables: Vec<Vec<usize>>,
}

impl JointPrescription {
    #[inline]
    pub fn action(&self, i: usize, row: usize) -> usize {
        self.tables[i][row]
    }
}

/// All joint prescriptions of one step in lexicographic order: controller 0
/// most significant, then rows in `(y, m)` row-major order, the first row
/// most significant.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PrescriptionSpace {
    pub t: usize,
    /// Rows `|Y^i_t| * |M^i_t|` per controller.
    pub rows: Vec<usize>,
    pub actions: Vec<usize>,
    size: usize,
}

/// `prod_i |U^i|^(|Y^i| |M^i|)`, saturating at `u128::MAX`.
pub fn prescription_count(spec: &ProblemSpec, t: usize) -> u128 {
    let mut total: u128 = 1;
    for i in 0..spec.n {
        let rows = (spec.obs_card(i, t) * spec.memory_card(i, t)) as u32;
        let per = (spec.action_card(i, t) as u128).checked_pow(rows).unwrap_or(u128::MAX);
        total = total.saturating_mul(per);
    }
    total
}

impl PrescriptionSpace {
    pub fn new(spec: &ProblemSpec, t: usize, cap: u128) -> Result<Self> {
        let size = prescription_count(spec, t);
        if size > cap {
            return Err(Error::SizeOverflow { what: format!("joint prescription space at step {t}"), size, cap });
        }
        Ok(Self {
            t,
            rows: (0..spec.n).map(|i| spec.obs_card(i, t) * spec.memory_card(i, t)).collect(),
            actions: (0..spec.n).map(|i| spec.action_card(i, t)).collect(),
            size: size as usize,
        })
    }

    #[inline]
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn decode(&self, index: usize) -> JointPrescription {
        let mut tables: Vec<Vec<usize>> = self.rows.iter().map(|&r| vec![0; r]).collect();
        let mut rest = index;
        for i in (0..self.rows.len()).rev() {
            for row in (0..self.rows[i]).rev() {
                tables[i][row] = rest % self.actions[i];
                rest /= self.actions[i];
            }
        }
        JointPrescription { index, tables }
    }

    pub fn encode(&self, tables: &[Vec<usize>]) -> usize {
        let mut index = 0;
        for (i, table) in tables.iter().enumerate() {
            for &a in table {
                index = index * self.actions[i] + a;
            }
        }
        index
    }

    pub fn iter(&self) -> impl Iterator<Item = JointPrescription> + '_ {
        (0..self.size).map(|k| self.decode(k))
    }
}
