//! Electrical heating sources: Joule dissipation from a 2D sheet-current
//! solve, uniform RF absorption, and Gaussian laser absorption.

use super::{Region, TerminalAxis, ThermalScene};
use crate::detection::ProbeSpot;
use crate::error::{Error, Result};
use crate::grid::Grid;

/// Result of the unit-voltage sheet-current solve.
pub struct CurrentSolution {
    /// Electric potential, V, on metal cells of the driven component.
    pub potential: Grid,
    /// Dissipated power per cell at unit terminal voltage, W.
    pub cell_power_unit: Vec<f64>,
    /// Terminal current at unit voltage, A.
    pub unit_current: f64,
    /// Terminal-to-terminal resistance, Ohm.
    pub total_resistance: f64,
    /// Cells of the current-carrying component.
    pub path: Vec<bool>,
}

fn terminal_columns(scene: &ThermalScene) -> Result<(Vec<usize>, Vec<usize>)> {
    let (nx, ny) = (scene.nx, scene.ny);
    let mut a = Vec::new();
    let mut b = Vec::new();
    match scene.terminal_axis {
        TerminalAxis::X => {
            let mut lo = usize::MAX;
            let mut hi = 0;
            for y in 0..ny {
                for x in 0..nx {
                    if scene.region(x, y) == Region::Metal {
                        lo = lo.min(x);
                        hi = hi.max(x);
                    }
                }
            }
            if lo == usize::MAX || lo == hi {
                return Err(Error::domain("no metal span along the terminal axis"));
            }
            for y in 0..ny {
                if scene.region(lo, y) == Region::Metal {
                    a.push(scene.idx(lo, y));
                }
                if scene.region(hi, y) == Region::Metal {
                    b.push(scene.idx(hi, y));
                }
            }
        }
        TerminalAxis::Y => {
            let mut lo = usize::MAX;
            let mut hi = 0;
            for y in 0..ny {
                for x in 0..nx {
                    if scene.region(x, y) == Region::Metal {
                        lo = lo.min(y);
                        hi = hi.max(y);
                    }
                }
            }
            if lo == usize::MAX || lo == hi {
                return Err(Error::domain("no metal span along the terminal axis"));
            }
            for x in 0..nx {
                if scene.region(x, lo) == Region::Metal {
                    a.push(scene.idx(x, lo));
                }
                if scene.region(x, hi) == Region::Metal {
                    b.push(scene.idx(x, hi));
                }
            }
        }
    }
    Ok((a, b))
}

/// Flood fill over metal cells from the given seeds.
fn connected_metal(scene: &ThermalScene, seeds: &[usize]) -> Vec<bool> {
    let (nx, ny) = (scene.nx, scene.ny);
    let mut seen = vec![false; nx * ny];
    let mut stack: Vec<usize> = seeds.to_vec();
    for &s in seeds {
        seen[s] = true;
    }
    while let Some(i) = stack.pop() {
        let (x, y) = (i % nx, i / nx);
        let push = |xx: usize, yy: usize, seen: &mut Vec<bool>, stack: &mut Vec<usize>| {
            let j = yy * nx + xx;
            if !seen[j] && scene.mask[j] == Region::Metal {
                seen[j] = true;
                stack.push(j);
            }
        };
        if x > 0 {
            push(x - 1, y, &mut seen, &mut stack);
        }
        if x + 1 < nx {
            push(x + 1, y, &mut seen, &mut stack);
        }
        if y > 0 {
            push(x, y - 1, &mut seen, &mut stack);
        }
        if y + 1 < ny {
            push(x, y + 1, &mut seen, &mut stack);
        }
    }
    seen
}

/// Edge conductance between two metal cells: series combination of the two
/// half-cell sheet conductances (harmonic mean; reduces to 1/R_sq on a
/// uniform sheet).
#[inline]
fn edge_conductance(scene: &ThermalScene, i: usize, j: usize) -> f64 {
    let gi = 1.0 / scene.sheet_resistance[i];
    let gj = 1.0 / scene.sheet_resistance[j];
    2.0 * gi * gj / (gi + gj)
}

/// Solve the 2D current-conservation problem on the metal mask with unit
/// voltage across the terminals.
pub fn solve_current_density(scene: &ThermalScene) -> Result<CurrentSolution> {
    scene.validate()?;
    let (term_a, term_b) = terminal_columns(scene)?;
    let reach_a = connected_metal(scene, &term_a);
    if !term_b.iter().any(|&i| reach_a[i]) {
        return Err(Error::domain(
            "metal path between the terminals is disconnected",
        ));
    }
    let path = {
        // Current flows only where both terminals are reachable.
        let reach_b = connected_metal(scene, &term_b);
        reach_a
            .iter()
            .zip(&reach_b)
            .map(|(&a, &b)| a && b)
            .collect::<Vec<bool>>()
    };

    let (nx, ny) = (scene.nx, scene.ny);
    let n = nx * ny;
    // Potential with Dirichlet values on the terminals: 0 on A, 1 on B.
    let mut fixed = vec![f64::NAN; n];
    for &i in &term_a {
        fixed[i] = 0.0;
    }
    for &i in &term_b {
        fixed[i] = 1.0;
    }
    let free: Vec<usize> = (0..n).filter(|&i| path[i] && fixed[i].is_nan()).collect();
    let mut slot = vec![usize::MAX; n];
    for (k, &i) in free.iter().enumerate() {
        slot[i] = k;
    }

    let neighbor = |i: usize| {
        let (x, y) = (i % nx, i / nx);
        [
            (x > 0).then(|| i - 1),
            (x + 1 < nx).then(|| i + 1),
            (y > 0).then(|| i - nx),
            (y + 1 < ny).then(|| i + nx),
        ]
    };

    // A*phi for free nodes; Dirichlet contributions move to the RHS.
    let apply = |v: &[f64], out: &mut [f64]| {
        for (k, &i) in free.iter().enumerate() {
            let [w, e, no, s] = neighbor(i);
            let mut diag = 0.0;
            let mut flux_we = 0.0;
            let mut flux_ns = 0.0;
            let acc = |nb: Option<usize>, flux: &mut f64, diag: &mut f64| {
                if let Some(j) = nb {
                    if path[j] {
                        let g = edge_conductance(scene, i, j);
                        *diag += g;
                        if slot[j] != usize::MAX {
                            *flux += g * v[slot[j]];
                        }
                    }
                }
            };
            acc(w, &mut flux_we, &mut diag);
            acc(e, &mut flux_we, &mut diag);
            acc(no, &mut flux_ns, &mut diag);
            acc(s, &mut flux_ns, &mut diag);
            out[k] = diag * v[k] - (flux_we + flux_ns);
        }
    };

    let mut rhs = vec![0.0; free.len()];
    for (k, &i) in free.iter().enumerate() {
        for nb in neighbor(i).into_iter().flatten() {
            if path[nb] && !fixed[nb].is_nan() {
                rhs[k] += edge_conductance(scene, i, nb) * fixed[nb];
            }
        }
    }

    // Conjugate gradients; the operator is SPD on the free nodes.
    let mut phi = vec![0.0; free.len()];
    let mut r = rhs.clone();
    let mut p = r.clone();
    let mut ap = vec![0.0; free.len()];
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let mut rs = dot(&r, &r);
    let rhs_norm = rs.sqrt().max(f64::MIN_POSITIVE);
    let tol = 1e-13 * rhs_norm;
    let max_iter = 20 * free.len() + 100;
    let mut iter = 0;
    while rs.sqrt() > tol && iter < max_iter {
        apply(&p, &mut ap);
        let alpha = rs / dot(&p, &ap);
        for k in 0..phi.len() {
            phi[k] += alpha * p[k];
            r[k] -= alpha * ap[k];
        }
        let rs_new = dot(&r, &r);
        let beta = rs_new / rs;
        rs = rs_new;
        for k in 0..p.len() {
            p[k] = r[k] + beta * p[k];
        }
        iter += 1;
    }
    if rs.sqrt() > tol * 10.0 {
        return Err(Error::NonConvergence(format!(
            "sheet-current solve stalled at residual {:.3e} after {iter} iterations",
            rs.sqrt() / rhs_norm
        )));
    }

    let mut potential = Grid::zeros(nx, ny);
    for i in 0..n {
        let v = if !fixed[i].is_nan() {
            fixed[i]
        } else if slot[i] != usize::MAX {
            phi[slot[i]]
        } else {
            0.0
        };
        potential.as_mut_slice()[i] = v;
    }

    // Per-cell dissipation: half of each incident edge's G (dphi)^2.
    let mut cell_power = vec![0.0; n];
    let mut unit_current = 0.0;
    for y in 0..ny {
        for x in 0..nx {
            let i = y * nx + x;
            if !path[i] {
                continue;
            }
            for (dx, dy) in [(1isize, 0isize), (0, 1)] {
                let (xx, yy) = (x as isize + dx, y as isize + dy);
                if xx < 0 || yy < 0 || xx as usize >= nx || yy as usize >= ny {
                    continue;
                }
                let j = yy as usize * nx + xx as usize;
                if !path[j] {
                    continue;
                }
                let g = edge_conductance(scene, i, j);
                let dphi = potential.as_slice()[j] - potential.as_slice()[i];
                let p_edge = g * dphi * dphi;
                cell_power[i] += 0.5 * p_edge;
                cell_power[j] += 0.5 * p_edge;
            }
        }
    }
    // Terminal current at unit voltage equals the total dissipated power.
    for &i in &term_a {
        let (x, y) = (i % nx, i / nx);
        for nb in neighbor(y * nx + x).into_iter().flatten() {
            if path[nb] && fixed[nb].is_nan() || (path[nb] && fixed[nb] == 1.0) {
                let g = edge_conductance(scene, i, nb);
                unit_current += g * (potential.as_slice()[nb] - potential.as_slice()[i]);
            }
        }
    }
    if !(unit_current > 0.0) {
        return Err(Error::domain("terminals carry no current"));
    }

    Ok(CurrentSolution {
        potential,
        cell_power_unit: cell_power,
        unit_current,
        total_resistance: 1.0 / unit_current,
        path,
    })
}

/// Joule heating from a terminal current, as per-cell volumetric power
/// density in the film (W/m^3). Total dissipation equals I^2 R_total.
pub fn joule_source(scene: &ThermalScene, current: f64) -> Result<Grid> {
    if current == 0.0 {
        scene.validate()?;
        return Ok(Grid::zeros(scene.nx, scene.ny));
    }
    let sol = solve_current_density(scene)?;
    let volts = current / sol.unit_current;
    let cell_volume = scene.cell_size * scene.cell_size * scene.metal.thickness;
    let mut q = Grid::zeros(scene.nx, scene.ny);
    for (i, &p) in sol.cell_power_unit.iter().enumerate() {
        q.as_mut_slice()[i] = p * volts * volts / cell_volume;
    }
    Ok(q)
}

/// Uniform absorbed RF power over the current-carrying strip, W/m^3.
pub fn rf_source(scene: &ThermalScene, absorbed_power: f64) -> Result<Grid> {
    scene.validate()?;
    let sol = solve_current_density(scene)?;
    let n_cells = sol.path.iter().filter(|&&p| p).count();
    let cell_volume = scene.cell_size * scene.cell_size * scene.metal.thickness;
    let density = absorbed_power / (n_cells as f64 * cell_volume);
    let mut q = Grid::zeros(scene.nx, scene.ny);
    for (i, &on) in sol.path.iter().enumerate() {
        if on {
            q.as_mut_slice()[i] = density;
        }
    }
    Ok(q)
}

/// Gaussian-profile laser absorption over metal cells, W/m^3 in the film.
/// Light hitting non-metal cells is scattered and lost.
pub fn laser_source(scene: &ThermalScene, spot: &ProbeSpot) -> Result<Grid> {
    scene.validate()?;
    spot.validate()?;
    let mut q = Grid::zeros(scene.nx, scene.ny);
    if spot.power_at_sample == 0.0 {
        return Ok(q);
    }
    let absorbed_fraction = 1.0 - scene.metal.base_reflectivity;
    if absorbed_fraction == 0.0 {
        return Ok(q);
    }
    let w0 = spot.waist_radius();
    let norm = std::f64::consts::PI * w0 * w0 / 2.0;
    let cell_area = scene.cell_size * scene.cell_size;
    let cell_volume = cell_area * scene.metal.thickness;
    for y in 0..scene.ny {
        for x in 0..scene.nx {
            if scene.region(x, y) != Region::Metal {
                continue;
            }
            let dx = scene.x_of(x) - spot.center.0;
            let dy = scene.y_of(y) - spot.center.1;
            let w = (-2.0 * (dx * dx + dy * dy) / (w0 * w0)).exp();
            let absorbed = absorbed_fraction * spot.power_at_sample * w * cell_area / norm;
            q.set(x, y, absorbed / cell_volume);
        }
    }
    Ok(q)
}
