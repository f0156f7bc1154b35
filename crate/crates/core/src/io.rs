//! Wire formats: CSV writers for trajectories, lifts and path samples, and
//! the sidecar metadata structs. Floats are written in shortest round-trip
//! form, so identical data produces identical bytes.

use crate::error::{Error, Result};
use crate::micro::{DriverPath, ModelParams, Trajectory};
use crate::rough::RoughPathGrid;
use crate::sde::PathSample;
use serde::{Deserialize, Serialize};
use std::io::Write;

/// Columns: t, p_1..p_Nd, u_1..u_Nd, Phi_1..Phi_Nd (driver interpolated
/// exactly onto the output grid).
pub fn write_trajectory_csv<W: Write>(traj: &Trajectory, mut w: W) -> Result<()> {
    let nd = traj.nd();
    write!(w, "t")?;
    for name in ["p", "u", "Phi"] {
        for i in 1..=nd {
            write!(w, ",{name}_{i}")?;
        }
    }
    writeln!(w)?;
    let mut phi = vec![0.0; nd];
    for (gi, &t) in traj.grid.iter().enumerate() {
        traj.driver.value_at_into(t, &mut phi)?;
        write!(w, "{t}")?;
        for x in traj.p_at(gi) {
            write!(w, ",{x}")?;
        }
        for x in traj.u_at(gi) {
            write!(w, ",{x}")?;
        }
        for x in &phi {
            write!(w, ",{x}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

/// JSON sidecar of a trajectory file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrajectorySidecar {
    pub params: ModelParams,
    pub seed: Option<(u64, u64)>,
    pub event_count: usize,
    pub grid_points: usize,
    pub max_u_jump: f64,
    pub max_energy_defect: f64,
}

impl TrajectorySidecar {
    pub fn of(traj: &Trajectory) -> Self {
        TrajectorySidecar {
            params: traj.params.clone(),
            seed: traj.seed,
            event_count: traj.events.len(),
            grid_points: traj.grid.len(),
            max_u_jump: traj.max_u_jump,
            max_energy_defect: traj.max_energy_defect,
        }
    }
}

/// Columns: t, W_1..W_m, WW_1_1..WW_m_m (level 2 flattened row-major,
/// both anchored at the first grid point).
pub fn write_lift_csv<W: Write>(lift: &RoughPathGrid, mut w: W) -> Result<()> {
    let m = lift.dim();
    write!(w, "t")?;
    for i in 1..=m {
        write!(w, ",W_{i}")?;
    }
    for i in 1..=m {
        for j in 1..=m {
            write!(w, ",WW_{i}_{j}")?;
        }
    }
    writeln!(w)?;
    for (gi, &t) in lift.grid().iter().enumerate() {
        write!(w, "{t}")?;
        for x in lift.w_anchored(gi) {
            write!(w, ",{x}")?;
        }
        for x in lift.ww_anchored(gi) {
            write!(w, ",{x}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

/// Columns: t, x_1..x_dim.
pub fn write_path_sample_csv<W: Write>(sample: &PathSample, mut w: W) -> Result<()> {
    write!(w, "t")?;
    for i in 1..=sample.dim {
        write!(w, ",x_{i}")?;
    }
    writeln!(w)?;
    for (i, &t) in sample.times.iter().enumerate() {
        write!(w, "{t}")?;
        for x in sample.state_at(i) {
            write!(w, ",{x}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

/// Parse the driver columns (t, Phi_1..Phi_Nd) back out of a trajectory CSV.
pub fn read_driver_from_trajectory_csv(text: &str) -> Result<DriverPath> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or(Error::MalformedInput {
        line: 1,
        reason: "empty file".into(),
    })?;
    let cols: Vec<&str> = header.split(',').collect();
    let phi_cols: Vec<usize> = cols
        .iter()
        .enumerate()
        .filter(|(_, c)| c.starts_with("Phi_"))
        .map(|(i, _)| i)
        .collect();
    if cols.first() != Some(&"t") || phi_cols.is_empty() {
        return Err(Error::MalformedInput {
            line: 1,
            reason: "expected header t,...,Phi_1..Phi_Nd".into(),
        });
    }
    let nd = phi_cols.len();
    let mut times = Vec::new();
    let mut values = Vec::new();
    for (li, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != cols.len() {
            return Err(Error::MalformedInput {
                line: li + 1,
                reason: format!("expected {} fields, got {}", cols.len(), fields.len()),
            });
        }
        let parse = |s: &str, line: usize| -> Result<f64> {
            s.parse::<f64>().map_err(|e| Error::MalformedInput {
                line,
                reason: format!("bad float {s:?}: {e}"),
            })
        };
        times.push(parse(fields[0], li + 1)?);
        for &ci in &phi_cols {
            values.push(parse(fields[ci], li + 1)?);
        }
    }
    DriverPath::from_points(nd, times, values)
}
