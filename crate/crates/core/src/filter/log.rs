use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One closed-loop step. `barrier` is NaN for filters without one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub time: f64,
    pub barrier: f64,
    pub constraint: f64,
    pub u_ref_x: f64,
    pub u_ref_y: f64,
    pub u_x: f64,
    pub u_y: f64,
    pub intervened: bool,
    pub feasible: bool,
    /// True position before the action is applied.
    pub pos_x: f64,
    pub pos_y: f64,
    /// Safety label of the state reached after the action.
    pub unsafe_after: bool,
}

impl StepRecord {
    pub fn u_ref(&self) -> [f64; 2] {
        [self.u_ref_x, self.u_ref_y]
    }

    pub fn u(&self) -> [f64; 2] {
        [self.u_x, self.u_y]
    }
}

pub const LOG_HEADER: &str =
    "time,barrier,constraint,u_ref_x,u_ref_y,u_x,u_y,intervened,feasible,pos_x,pos_y,unsafe_after";

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::io(path, std::io::Error::other(e))
}

pub fn write_log_csv(path: &Path, records: &[StepRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    for r in records {
        w.serialize(r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_log_csv(path: &Path) -> Result<Vec<StepRecord>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    r.deserialize().map(|row| row.map_err(|e| csv_err(path, e))).collect()
}
