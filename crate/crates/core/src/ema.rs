//! Exponential-moving-average teacher update over flat parameter vectors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_DECAY: f64 = 0.9996;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    pub values: Vec<f64>,
    /// Number of EMA updates applied so far.
    pub version: u64,
}

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite parameter at index {i}")));
        }
        Ok(Self { values, version: 0 })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// `teacher <- k * teacher + (1 - k) * student`, elementwise.
pub fn ema_step(teacher: &ParamVector, student: &ParamVector, k: f64) -> Result<ParamVector> {
    let mut next = teacher.clone();
    ema_update(&mut next, student, k)?;
    Ok(next)
}

/// In-place variant of [`ema_step`].
pub fn ema_update(teacher: &mut ParamVector, student: &ParamVector, k: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&k) {
        return Err(Error::InvalidInput(format!("decay must be in [0, 1], got {k}")));
    }
    if teacher.len() != student.len() {
        return Err(Error::Dimension(format!(
            "teacher has {} parameters, student has {}",
            teacher.len(),
            student.len()
        )));
    }
    for (t, s) in teacher.values.iter_mut().zip(&student.values) {
        *t = k * *t + (1.0 - k) * s;
    }
    teacher.version += 1;
    Ok(())
}
