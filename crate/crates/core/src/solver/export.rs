//! CSV export of trajectories. Densities in veh/km, speeds in km/h, flows in veh/h.

use std::path::Path;

use super::{Outlet, Trajectory};
use crate::error::Result;
use crate::io::write_atomic;

/// `%g`-style rendering with `digits` significant digits.
pub fn format_sig(x: f64, digits: usize) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let exp = x.abs().log10().floor() as i32;
    let s = if exp < -5 || exp >= digits as i32 {
        let s = format!("{:.*e}", digits - 1, x);
        let (mant, e) = s.split_once('e').unwrap();
        format!("{}e{}", trim_zeros(mant), e)
    } else {
        let decimals = (digits as i32 - 1 - exp).max(0) as usize;
        trim_zeros(&format!("{:.*}", decimals, x)).to_string()
    };
    s
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

fn g9(x: f64) -> String {
    format_sig(x, 9)
}

pub fn write_trajectory_csv(traj: &Trajectory, path: &Path) -> Result<()> {
    write_atomic(path, |w| {
        writeln!(w, "step,t_s,node,x_m,rho_veh_per_km,v_km_per_h")?;
        for (k, s) in traj.states.iter().enumerate() {
            for i in 0..s.len() {
                writeln!(
                    w,
                    "{k},{},{i},{},{},{}",
                    g9(s.t),
                    g9(traj.grid.x(i)),
                    g9(s.rho[i] * 1000.0),
                    g9(s.v[i] * 3.6)
                )?;
            }
        }
        Ok(())
    })
}

pub fn write_commands_csv(traj: &Trajectory, path: &Path) -> Result<()> {
    write_atomic(path, |w| {
        writeln!(w, "step,t_s,inlet_flow_veh_per_h,outlet_kind,outlet_value")?;
        for (k, c) in traj.commands.iter().enumerate() {
            let outlet = match c.outlet {
                Outlet::Flow(q) => q * 3600.0,
                Outlet::Velocity(v) => v * 3.6,
            };
            writeln!(
                w,
                "{k},{},{},{},{}",
                g9(traj.states[k].t),
                g9(c.inlet * 3600.0),
                c.outlet.kind_name(),
                g9(outlet)
            )?;
        }
        Ok(())
    })
}
