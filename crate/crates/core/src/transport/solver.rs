//! Explicit finite-volume update: first-order upwind advection, central
//! diffusion, then exact exponential decay to deposition and oxidation.

use super::{Boundary, DepositionField, EmissionField, TransportError, TransportParams, Tracers};
use crate::grid::GridSpec;

const HG0: usize = 0;
const HG2: usize = 1;
const HGP: usize = 2;
const OX: usize = 3;

/// Face velocities: x faces are `(nx + 1) * ny`, y faces `nx * (ny + 1)`.
struct Faces {
    u: Vec<f64>,
    v: Vec<f64>,
}

impl Faces {
    fn new(params: &TransportParams, grid: &GridSpec) -> Self {
        let (nx, ny) = (grid.nx(), grid.ny());
        let mut u = Vec::with_capacity((nx + 1) * ny);
        for j in 0..ny {
            for f in 0..=nx {
                let w = if f == 0 {
                    params.wind_u[grid.index(0, j)]
                } else if f == nx {
                    params.wind_u[grid.index(nx - 1, j)]
                } else {
                    0.5 * (params.wind_u[grid.index(f - 1, j)] + params.wind_u[grid.index(f, j)])
                };
                u.push(w);
            }
        }
        let mut v = Vec::with_capacity(nx * (ny + 1));
        for f in 0..=ny {
            for i in 0..nx {
                let w = if f == 0 {
                    params.wind_v[grid.index(i, 0)]
                } else if f == ny {
                    params.wind_v[grid.index(i, ny - 1)]
                } else {
                    0.5 * (params.wind_v[grid.index(i, f - 1)] + params.wind_v[grid.index(i, f)])
                };
                v.push(w);
            }
        }
        Self { u, v }
    }

    fn u(&self, nx: usize, f: usize, j: usize) -> f64 {
        self.u[j * (nx + 1) + f]
    }

    fn v(&self, nx: usize, i: usize, f: usize) -> f64 {
        self.v[f * nx + i]
    }
}

/// Largest step for which every cell loses at most its own mass per step.
///
/// Per cell the outgoing rate is the sum of outward face speeds over the
/// cell width plus `4 K / dx²`. Returns infinity for a still, non-diffusive
/// atmosphere.
pub fn max_stable_dt(params: &TransportParams, grid: &GridSpec) -> f64 {
    let faces = Faces::new(params, grid);
    let (nx, ny) = (grid.nx(), grid.ny());
    let dx = grid.header.cell_size_m();
    let diff = 4.0 * params.diffusivity / (dx * dx);
    let mut worst: f64 = 0.0;
    for j in 0..ny {
        for i in 0..nx {
            let out = (-faces.u(nx, i, j)).max(0.0)
                + faces.u(nx, i + 1, j).max(0.0)
                + (-faces.v(nx, i, j)).max(0.0)
                + faces.v(nx, i, j + 1).max(0.0);
            worst = worst.max(out / dx + diff);
        }
    }
    if worst > 0.0 {
        1.0 / worst
    } else {
        f64::INFINITY
    }
}

/// Runs the pulse-release transport model.
///
/// The horizon is split into `ceil(horizon / dt)` equal steps, each no
/// longer than `params.dt`. All reductions use a fixed loop order so results
/// are bit-reproducible.
pub fn simulate(
    emis: &EmissionField,
    params: &TransportParams,
    grid: &GridSpec,
) -> Result<DepositionField, TransportError> {
    if (emis.nx, emis.ny) != (grid.nx(), grid.ny()) {
        return Err(TransportError::ShapeMismatch { expected: (grid.nx(), grid.ny()), got: (emis.nx, emis.ny) });
    }
    params.validate(grid)?;
    if emis.cells.iter().any(|m| !m.is_finite()) {
        return Err(TransportError::InvalidParams { field: "emissions", reason: "must be finite".into() });
    }
    let max_dt = max_stable_dt(params, grid);
    if params.dt > max_dt {
        return Err(TransportError::CflViolation { dt: params.dt, max_dt });
    }

    let (nx, ny) = (grid.nx(), grid.ny());
    let n = nx * ny;
    let steps = if params.horizon > 0.0 { (params.horizon / params.dt).ceil() as usize } else { 0 };
    let dt = if steps > 0 { params.horizon / steps as f64 } else { 0.0 };
    let dx = grid.header.cell_size_m();
    let adv = dt / dx;
    let dif = params.diffusivity * dt / (dx * dx);
    let faces = Faces::new(params, grid);
    let open = params.boundary == Boundary::Open;
    let ghost = [params.boundary_inflow.hg0, params.boundary_inflow.hg2, params.boundary_inflow.hgp, 0.0];

    let mut mass: [Vec<f64>; 4] = [
        emis.cells.iter().map(|m| m.hg0).collect(),
        emis.cells.iter().map(|m| m.hg2).collect(),
        emis.cells.iter().map(|m| m.hgp).collect(),
        vec![0.0; n],
    ];
    let mut next = vec![0.0; n];
    let mut dep = [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    let mut imported = [0.0; 4];
    let mut exported = [0.0; 4];
    let mut oxidized = 0.0;

    let rates = [params.deposition.hg0, params.deposition.hg2, params.deposition.hgp, params.deposition.hg2];
    let loss0 = params.deposition.hg0 + params.oxidation;
    let keep0 = -(-loss0 * dt).exp_m1();
    let dep_share0 = if loss0 > 0.0 { params.deposition.hg0 / loss0 } else { 0.0 };
    let keep: Vec<f64> = rates.iter().map(|r| -(-r * dt).exp_m1()).collect();

    for _ in 0..steps {
        for t in 0..4 {
            let m = &mass[t];
            next.copy_from_slice(m);
            let g = ghost[t];
            // x faces
            for j in 0..ny {
                let row = j * nx;
                for f in 1..nx {
                    let (a, b) = (row + f - 1, row + f);
                    let w = faces.u(nx, f, j);
                    let flux = if w > 0.0 { w * adv * m[a] } else { w * adv * m[b] } + dif * (m[a] - m[b]);
                    next[a] -= flux;
                    next[b] += flux;
                }
                if open {
                    let c = row;
                    let w = faces.u(nx, 0, j);
                    let inward = if w > 0.0 { w * adv * g } else { w * adv * m[c] };
                    boundary_flux(inward, &mut next[c], &mut imported[t], &mut exported[t]);
                    boundary_flux(dif * (g - m[c]), &mut next[c], &mut imported[t], &mut exported[t]);
                    let c = row + nx - 1;
                    let w = faces.u(nx, nx, j);
                    let inward = if w > 0.0 { -w * adv * m[c] } else { -w * adv * g };
                    boundary_flux(inward, &mut next[c], &mut imported[t], &mut exported[t]);
                    boundary_flux(dif * (g - m[c]), &mut next[c], &mut imported[t], &mut exported[t]);
                }
            }
            // y faces
            for f in 1..ny {
                for i in 0..nx {
                    let (a, b) = ((f - 1) * nx + i, f * nx + i);
                    let w = faces.v(nx, i, f);
                    let flux = if w > 0.0 { w * adv * m[a] } else { w * adv * m[b] } + dif * (m[a] - m[b]);
                    next[a] -= flux;
                    next[b] += flux;
                }
            }
            if open {
                for i in 0..nx {
                    let c = i;
                    let w = faces.v(nx, i, 0);
                    let inward = if w > 0.0 { w * adv * g } else { w * adv * m[c] };
                    boundary_flux(inward, &mut next[c], &mut imported[t], &mut exported[t]);
                    boundary_flux(dif * (g - m[c]), &mut next[c], &mut imported[t], &mut exported[t]);
                    let c = (ny - 1) * nx + i;
                    let w = faces.v(nx, i, ny);
                    let inward = if w > 0.0 { -w * adv * m[c] } else { -w * adv * g };
                    boundary_flux(inward, &mut next[c], &mut imported[t], &mut exported[t]);
                    boundary_flux(dif * (g - m[c]), &mut next[c], &mut imported[t], &mut exported[t]);
                }
            }
            mass[t].copy_from_slice(&next);
        }

        for c in 0..n {
            let lost = mass[HG0][c] * keep0;
            let d = lost * dep_share0;
            let ox = lost - d;
            mass[HG0][c] -= lost;
            dep[HG0][c] += d;
            oxidized += ox;
            for t in [HG2, HGP, OX] {
                let lost = mass[t][c] * keep[t];
                mass[t][c] -= lost;
                dep[t][c] += lost;
            }
            mass[OX][c] += ox;
        }
    }

    let tracer = |a: [f64; 4]| Tracers { hg0: a[HG0], hg2: a[HG2], hgp: a[HGP], ox: a[OX] };
    let sum = |v: &Vec<f64>| v.iter().sum::<f64>();
    let emitted = emis.total();
    Ok(DepositionField {
        nx,
        ny,
        deposited: (0..n).map(|c| tracer([dep[HG0][c], dep[HG2][c], dep[HGP][c], dep[OX][c]])).collect(),
        emitted: Tracers { hg0: emitted.hg0, hg2: emitted.hg2, hgp: emitted.hgp, ox: 0.0 },
        imported: tracer(imported),
        exported: tracer(exported),
        airborne: tracer([sum(&mass[HG0]), sum(&mass[HG2]), sum(&mass[HGP]), sum(&mass[OX])]),
        oxidized,
    })
}

/// Applies a signed inward flux through a domain edge and books it.
#[inline]
fn boundary_flux(inward: f64, cell: &mut f64, imported: &mut f64, exported: &mut f64) {
    *cell += inward;
    if inward >= 0.0 {
        *imported += inward;
    } else {
        *exported -= inward;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mass::SpeciatedMass;
    use crate::transport::{SpeciesRates, Tracers};

    fn pulse(grid: &GridSpec, cell: usize, m: SpeciatedMass) -> EmissionField {
        let mut e = EmissionField::for_grid(grid);
        e.cells[cell] = m;
        e
    }

    fn centroid_x(dep: &DepositionField, grid: &GridSpec) -> f64 {
        let mut w = 0.0;
        let mut s = 0.0;
        for (c, d) in dep.deposited.iter().enumerate() {
            let t = d.total();
            w += t;
            s += t * grid.coords(c).0 as f64;
        }
        s / w
    }

    #[test]
    fn still_air_deposits_everything_locally() {
        let grid = GridSpec::uniform(5, 5, 50.0, "P01");
        let mut p = TransportParams::uniform(grid.cells(), 0.0, 0.0);
        p.diffusivity = 0.0;
        p.oxidation = 0.0;
        p.deposition = SpeciesRates { hg0: 1e-5, hg2: 1e-5, hgp: 1e-5 };
        p.horizon = 31.0 / 1e-5;
        p.dt = p.horizon / 200.0;
        let e = pulse(&grid, 12, SpeciatedMass::new(5.0, 3.0, 2.0));
        let dep = simulate(&e, &p, &grid).unwrap();
        let local = dep.species_at(12);
        assert!((local.total() - 10.0).abs() < 1e-12);
        assert!((local.hg0 - 5.0).abs() < 1e-12);
        assert_eq!(dep.exported, Tracers::ZERO);
        for c in (0..25).filter(|&c| c != 12) {
            assert_eq!(dep.deposited[c], Tracers::ZERO);
        }
    }

    #[test]
    fn closed_box_without_deposition_conserves_mass() {
        let grid = GridSpec::uniform(6, 4, 50.0, "P01");
        let mut p = TransportParams::uniform(grid.cells(), 3.0, -2.0);
        p.boundary = Boundary::Closed;
        p.deposition = SpeciesRates::default();
        p.oxidation = 0.0;
        let e = pulse(&grid, 9, SpeciatedMass::new(7.0, 2.0, 1.0));
        let dep = simulate(&e, &p, &grid).unwrap();
        assert_eq!(dep.total_deposited(), Tracers::ZERO);
        assert_eq!(dep.exported, Tracers::ZERO);
        assert!((dep.airborne.total() - 10.0).abs() < 1e-12);
    }

    #[test]
    fn eastward_wind_moves_deposition_east() {
        let grid = GridSpec::uniform(15, 7, 50.0, "P01");
        let src = grid.index(4, 3);
        let e = pulse(&grid, src, SpeciatedMass::new(1.0, 1.0, 1.0));
        let p = TransportParams::uniform(grid.cells(), 5.0, 0.0);
        let dep = simulate(&e, &p, &grid).unwrap();
        assert!(centroid_x(&dep, &grid) > 4.0 + 0.5);
        let mut still = TransportParams::uniform(grid.cells(), 0.0, 0.0);
        still.diffusivity = 0.0;
        let dep = simulate(&e, &still, &grid).unwrap();
        assert!((centroid_x(&dep, &grid) - 4.0).abs() < 1e-9);
    }

    #[test]
    fn cfl_violation_reports_limit() {
        let grid = GridSpec::uniform(4, 4, 10.0, "P01");
        let mut p = TransportParams::uniform(grid.cells(), 10.0, 0.0);
        p.diffusivity = 0.0;
        p.dt = 2000.0;
        let err = simulate(&EmissionField::for_grid(&grid), &p, &grid).unwrap_err();
        match err {
            TransportError::CflViolation { max_dt, .. } => assert!((max_dt - 1000.0).abs() < 1e-9),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn no_oxidation_means_no_oxidised_deposition() {
        let grid = GridSpec::uniform(8, 8, 50.0, "P01");
        let mut p = TransportParams::uniform(grid.cells(), 2.0, 1.0);
        p.oxidation = 0.0;
        let dep = simulate(&pulse(&grid, 27, SpeciatedMass::new(3.0, 1.0, 1.0)), &p, &grid).unwrap();
        assert_eq!(dep.total_deposited().ox, 0.0);
        assert_eq!(dep.oxidized, 0.0);
        p.oxidation = 1e-6;
        let dep = simulate(&pulse(&grid, 27, SpeciatedMass::new(3.0, 1.0, 1.0)), &p, &grid).unwrap();
        assert!(dep.total_deposited().ox > 0.0);
        assert!(dep.mass_balance_error() < 1e-12);
    }

    #[test]
    fn translation_moves_pattern_by_one_cell() {
        let grid = GridSpec::uniform(30, 20, 50.0, "P01");
        let mut p = TransportParams::uniform(grid.cells(), 2.0, 1.0);
        p.horizon = 5.0 * 86400.0;
        let m = SpeciatedMass::new(1.0, 2.0, 0.5);
        let a = simulate(&pulse(&grid, grid.index(10, 8), m), &p, &grid).unwrap();
        let b = simulate(&pulse(&grid, grid.index(11, 8), m), &p, &grid).unwrap();
        let peak = a.deposited.iter().map(Tracers::total).fold(0.0, f64::max);
        for j in 3..15 {
            for i in 5..20 {
                let da = a.deposited[grid.index(i, j)];
                let db = b.deposited[grid.index(i + 1, j)];
                for (x, y) in da.as_array().iter().zip(db.as_array()) {
                    assert!((x - y).abs() <= 1e-9 * peak, "({i},{j}) {x} vs {y}");
                }
            }
        }
    }
}
