//! Diagnostics for learned and ground-truth dynamics: relative energy error,
//! Lyapunov spectra, Poincare sections and escape checks.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::dynamics::{hh_energy, propagate, PhaseState, PotentialParams, SeparableField, Trajectory};
use crate::error::{Error, Result};

/// Percent deviation `|E_pred - E_true| / E_true * 100` at every step, with
/// both energies evaluated under `params`.
pub fn relative_energy_error(pred: &Trajectory, truth: &Trajectory, params: &PotentialParams) -> Result<Vec<f64>> {
    if pred.len() != truth.len() {
        return Err(Error::LengthMismatch(pred.len(), truth.len()));
    }
    pred.states()
        .iter()
        .zip(truth.states())
        .enumerate()
        .map(|(k, (a, b))| {
            let e_true = hh_energy(b, params);
            if e_true == 0.0 {
                return Err(Error::ZeroEnergy(k));
            }
            Ok((hh_energy(a, params) - e_true).abs() / e_true * 100.0)
        })
        .collect()
}

/// Mean of [`relative_energy_error`].
pub fn mean_energy_error(pred: &Trajectory, truth: &Trajectory, params: &PotentialParams) -> Result<f64> {
    Ok(mean(&relative_energy_error(pred, truth, params)?))
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// True when the maximum over the second half of `series` exceeds `factor`
/// times the maximum over the first half.
pub fn secular_growth(series: &[f64], factor: f64) -> bool {
    let mid = series.len() / 2;
    let max = |s: &[f64]| s.iter().fold(f64::NEG_INFINITY, |m, v| m.max(*v));
    mid > 0 && max(&series[mid..]) > factor * max(&series[..mid])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LyapunovResult {
    /// Descending.
    pub exponents: [f64; 4],
    pub maximal: f64,
    pub n_steps: usize,
    /// Integrator steps between re-orthonormalizations.
    pub renorm_interval: usize,
}

impl LyapunovResult {
    pub fn sum(&self) -> f64 {
        self.exponents.iter().sum()
    }

    /// Largest `|lambda_i + lambda_{5-i}|` over the symplectic pairs.
    pub fn pairing_error(&self) -> f64 {
        let e = &self.exponents;
        (e[0] + e[3]).abs().max((e[1] + e[2]).abs())
    }
}

pub fn maximal_lyapunov(result: &LyapunovResult) -> f64 {
    result.exponents.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

type Mat4 = [[f64; 4]; 4];

/// Central-difference Jacobian `J[i][j] = d map_i / d x_j`.
pub fn jacobian<M: Fn(&PhaseState) -> PhaseState>(map: M, state: &PhaseState, eps: f64) -> Mat4 {
    jacobian_try(|s| Ok(map(s)), state, eps).expect("infallible map")
}

fn jacobian_try<M: Fn(&PhaseState) -> Result<PhaseState>>(map: M, state: &PhaseState, eps: f64) -> Result<Mat4> {
    let x = state.to_array();
    let mut j = [[0.0; 4]; 4];
    for col in 0..4 {
        let mut xp = x;
        let mut xm = x;
        xp[col] += eps;
        xm[col] -= eps;
        let fp = map(&PhaseState::from_array(xp))?.to_array();
        let fm = map(&PhaseState::from_array(xm))?.to_array();
        for row in 0..4 {
            j[row][col] = (fp[row] - fm[row]) / (2.0 * eps);
        }
    }
    Ok(j)
}

/// Determinant by Gaussian elimination with partial pivoting.
pub fn determinant(m: &Mat4) -> f64 {
    let mut a = *m;
    let mut det = 1.0;
    for k in 0..4 {
        let piv = (k..4).max_by(|&i, &j| a[i][k].abs().total_cmp(&a[j][k].abs())).unwrap();
        if a[piv][k] == 0.0 {
            return 0.0;
        }
        if piv != k {
            a.swap(piv, k);
            det = -det;
        }
        det *= a[k][k];
        for i in k + 1..4 {
            let f = a[i][k] / a[k][k];
            for c in k..4 {
                a[i][c] -= f * a[k][c];
            }
        }
    }
    det
}

pub fn jacobian_determinant<M: Fn(&PhaseState) -> PhaseState>(map: M, state: &PhaseState, eps: f64) -> f64 {
    determinant(&jacobian(map, state, eps))
}

fn matmul(a: &Mat4, b: &Mat4) -> Mat4 {
    let mut out = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            out[i][j] = (0..4).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

/// Modified Gram-Schmidt on the columns of `z`; returns `(Q, diag(R))`.
fn mgs_qr(z: &Mat4) -> Result<(Mat4, [f64; 4])> {
    let mut q = *z;
    let mut r = [0.0; 4];
    for j in 0..4 {
        for k in 0..j {
            let proj: f64 = (0..4).map(|i| q[i][k] * q[i][j]).sum();
            for i in 0..4 {
                q[i][j] -= proj * q[i][k];
            }
        }
        let norm = (0..4).map(|i| q[i][j] * q[i][j]).sum::<f64>().sqrt();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::DegenerateR { column: j, value: norm });
        }
        r[j] = norm;
        for i in 0..4 {
            q[i][j] /= norm;
        }
    }
    Ok((q, r))
}

/// Lyapunov spectrum of an arbitrary interval flow map. `flow` advances a
/// state by `interval_time`; the spectrum is accumulated over `n_intervals`.
pub fn lyapunov_spectrum_of_map<M>(
    flow: M,
    state0: &PhaseState,
    n_intervals: usize,
    interval_time: f64,
    eps: f64,
) -> Result<[f64; 4]>
where
    M: Fn(&PhaseState) -> Result<PhaseState>,
{
    if n_intervals == 0 || !(interval_time > 0.0) {
        return Err(Error::InvalidConfig("Lyapunov run needs a positive duration".into()));
    }
    let mut w: Mat4 = std::array::from_fn(|i| std::array::from_fn(|j| if i == j { 1.0 } else { 0.0 }));
    let mut state = *state0;
    let mut sums = [0.0; 4];
    for _ in 0..n_intervals {
        let j = jacobian_try(&flow, &state, eps)?;
        let (q, r) = mgs_qr(&matmul(&j, &w))?;
        for k in 0..4 {
            sums[k] += r[k].ln();
        }
        w = q;
        state = flow(&state)?;
    }
    let total = n_intervals as f64 * interval_time;
    let mut exps = sums.map(|s| s / total);
    exps.sort_by(|a, b| b.total_cmp(a));
    Ok(exps)
}

/// Finite-difference step for flow-map Jacobians.
pub const JACOBIAN_EPS: f64 = 1e-7;

/// Lyapunov spectrum of the leapfrog flow of `field`. `renorm_interval` is
/// in time units and is rounded to a whole number of steps; `n_steps` is
/// rounded down to a whole number of intervals.
pub fn lyapunov_spectrum<F: SeparableField + ?Sized>(
    field: &F,
    state0: &PhaseState,
    params: &PotentialParams,
    dt: f64,
    n_steps: usize,
    renorm_interval: f64,
) -> Result<LyapunovResult> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidConfig(format!("time step must be positive, got {dt}")));
    }
    let k = ((renorm_interval / dt).round() as usize).max(1);
    let n_intervals = n_steps / k;
    let flow = |s: &PhaseState| propagate(s, dt, k, field, params);
    let exponents = lyapunov_spectrum_of_map(flow, state0, n_intervals, k as f64 * dt, JACOBIAN_EPS)?;
    Ok(LyapunovResult {
        maximal: exponents[0],
        exponents,
        n_steps: n_intervals * k,
        renorm_interval: k,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SectionPoint {
    pub q_y: f64,
    pub p_y: f64,
    pub crossing_time: f64,
}

/// Crossings of `q_x = 0` with `p_x > 0`, linearly interpolated in time.
pub fn poincare_section(traj: &Trajectory) -> Vec<SectionPoint> {
    let s = traj.states();
    let dt = traj.dt();
    let mut out = Vec::new();
    for k in 0..s.len().saturating_sub(1) {
        let (a, b) = (&s[k], &s[k + 1]);
        if !(a.q[0] < 0.0 && b.q[0] >= 0.0) {
            continue;
        }
        let f = -a.q[0] / (b.q[0] - a.q[0]);
        let lerp = |x: f64, y: f64| x + f * (y - x);
        if lerp(a.p[0], b.p[0]) <= 0.0 {
            continue;
        }
        out.push(SectionPoint {
            q_y: lerp(a.q[1], b.q[1]),
            p_y: lerp(a.p[1], b.p[1]),
            crossing_time: (k as f64 + f) * dt,
        });
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Boundedness {
    pub bounded: bool,
    pub first_escape: Option<usize>,
}

/// Whether `|q|_inf` stays within `radius` along the trajectory.
pub fn boundedness_check(traj: &Trajectory, radius: f64) -> Result<Boundedness> {
    if !(radius > 0.0) {
        return Err(Error::InvalidConfig("radius must be positive".into()));
    }
    let first_escape = traj.states().iter().position(|s| !(s.q_sup_norm() <= radius));
    Ok(Boundedness {
        bounded: first_escape.is_none(),
        first_escape,
    })
}

/// `t,percent` rows.
pub fn write_energy_error_csv<W: Write>(out: W, dt: f64, percent: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "percent"])?;
    for (k, e) in percent.iter().enumerate() {
        w.serialize((k as f64 * dt, e))?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LyapunovRow {
    pub alpha: f64,
    pub beta: f64,
    pub lambda_max: f64,
}

pub fn write_lyapunov_csv<W: Write>(out: W, rows: &[LyapunovRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    if rows.is_empty() {
        w.write_record(["alpha", "beta", "lambda_max"])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_section_csv<W: Write>(out: W, points: &[SectionPoint]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["q_y", "p_y", "crossing_time"])?;
    for p in points {
        w.serialize((p.q_y, p.p_y, p.crossing_time))?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{integrate, leapfrog_map, HenonHeiles};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn traj_of(states: Vec<PhaseState>, params: PotentialParams) -> Trajectory {
        Trajectory::new(0.1, states, params).unwrap()
    }

    #[test]
    fn energy_error_values() {
        let params = PotentialParams::harmonic();
        let truth = traj_of(vec![PhaseState::new([0.0, 0.0], [2f64.sqrt(), 0.0])], params);
        let pred = traj_of(vec![PhaseState::new([0.0, 0.0], [2.04f64.sqrt(), 0.0])], params);
        assert_abs_diff_eq!(relative_energy_error(&pred, &truth, &params).unwrap()[0], 2.0, epsilon = 1e-12);
        assert_eq!(mean_energy_error(&truth, &truth, &params).unwrap(), 0.0);
        assert_eq!(mean(&[1.0, 2.0, 3.0]), 2.0);

        let zero = traj_of(vec![PhaseState::new([0.0; 2], [0.0; 2])], params);
        assert!(matches!(relative_energy_error(&zero, &zero, &params), Err(Error::ZeroEnergy(0))));
        let two = traj_of(vec![zero.states()[0]; 2], params);
        assert!(matches!(relative_energy_error(&two, &zero, &params), Err(Error::LengthMismatch(2, 1))));
    }

    #[test]
    fn secular_growth_detection() {
        assert!(secular_growth(&[1.0, 1.0, 2.0, 3.0], 1.5));
        assert!(!secular_growth(&[1.0, 2.0, 1.0, 2.0], 1.5));
        assert!(!secular_growth(&[1.0], 1.5));
    }

    #[test]
    fn maximal_values() {
        let r = LyapunovResult {
            exponents: [0.1, 0.0, 0.0, -0.1],
            maximal: 0.1,
            n_steps: 1,
            renorm_interval: 1,
        };
        assert_eq!(maximal_lyapunov(&r), 0.1);
        let z = LyapunovResult {
            exponents: [0.0; 4],
            ..r
        };
        assert_eq!(maximal_lyapunov(&z), 0.0);
    }

    #[test]
    fn determinant_values() {
        let m = [[2.0, 0.0, 0.0, 0.0], [0.0, 3.0, 0.0, 0.0], [0.0, 0.0, 0.0, 1.0], [0.0, 0.0, 1.0, 0.0]];
        assert_eq!(determinant(&m), -6.0);
    }

    #[test]
    fn qr_reconstructs_input() {
        let z = [[1.0, 2.0, 0.0, 1.0], [0.5, 1.0, 3.0, 0.0], [0.0, 1.0, 1.0, 2.0], [2.0, 0.0, 1.0, 1.0]];
        let (q, r) = mgs_qr(&z).unwrap();
        for a in 0..4 {
            for b in 0..4 {
                let d: f64 = (0..4).map(|i| q[i][a] * q[i][b]).sum();
                assert_abs_diff_eq!(d, if a == b { 1.0 } else { 0.0 }, epsilon = 1e-12);
            }
        }
        assert!(r.iter().all(|v| *v > 0.0));
        assert!(matches!(mgs_qr(&[[0.0; 4]; 4]), Err(Error::DegenerateR { column: 0, .. })));
        assert_abs_diff_eq!(r.iter().product::<f64>(), determinant(&z).abs(), epsilon = 1e-9);
    }

    #[test]
    fn harmonic_spectrum_vanishes() {
        let params = PotentialParams::harmonic();
        let s = PhaseState::new([0.3, 0.1], [0.0, 0.2]);
        let r = lyapunov_spectrum(&HenonHeiles, &s, &params, 0.01, 100_000, 1.0).unwrap();
        assert_eq!(r.renorm_interval, 100);
        assert!(r.exponents.iter().all(|e| e.abs() <= 1e-3), "{:?}", r.exponents);
    }

    #[test]
    fn chaotic_orbit_has_positive_exponent_and_pairing() {
        let params = PotentialParams::standard();
        let s = crate::data::state_on_shell(0.0, 0.1, 0.2, 1.0 / 6.0, &params).unwrap();
        let r = lyapunov_spectrum(&HenonHeiles, &s, &params, 0.01, 100_000, 1.0).unwrap();
        assert!(r.maximal > 0.02, "{:?}", r.exponents);
        assert!(r.pairing_error() <= 0.01, "{:?}", r.exponents);
        assert!(r.sum().abs() <= 0.02);
    }

    #[test]
    fn escaping_orbit_is_reported() {
        let params = PotentialParams::standard();
        let s = PhaseState::new([0.0, 0.0], [0.0, 2.0]);
        assert!(matches!(
            lyapunov_spectrum(&HenonHeiles, &s, &params, 0.01, 10_000, 1.0),
            Err(Error::IntegrationDiverged { .. })
        ));
    }

    #[test]
    fn section_of_constant_orbit_is_empty() {
        let params = PotentialParams::harmonic();
        let t = traj_of(vec![PhaseState::new([1.0, 0.0], [0.0, 0.0]); 50], params);
        assert!(poincare_section(&t).is_empty());
    }

    #[test]
    fn equal_frequency_oscillators_cluster() {
        let params = PotentialParams::harmonic();
        let s = PhaseState::new([0.0, 0.2], [0.3, 0.1]);
        let t = integrate(&s, 0.001, 100_000, &HenonHeiles, &params).unwrap();
        let pts = poincare_section(&t);
        assert!(pts.len() >= 15);
        // Exact solution at the upward crossing: q_y = 0.2, p_y = 0.1.
        for p in &pts {
            assert_abs_diff_eq!(p.q_y, 0.2, epsilon = 1e-5);
            assert_abs_diff_eq!(p.p_y, 0.1, epsilon = 1e-5);
        }
    }

    #[test]
    fn section_refinement_is_stable() {
        let params = PotentialParams::standard();
        let s = crate::data::state_on_shell(0.0, 0.1, 0.0, 1.0 / 8.0, &params).unwrap();
        let coarse = integrate(&s, 0.002, 25_000, &HenonHeiles, &params).unwrap();
        let fine = integrate(&s, 0.001, 50_000, &HenonHeiles, &params).unwrap();
        let a = poincare_section(&coarse);
        let b = poincare_section(&fine);
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert!((x.q_y - y.q_y).abs() <= 1e-3 && (x.p_y - y.p_y).abs() <= 1e-3);
        }
    }

    #[test]
    fn boundedness() {
        let params = PotentialParams::standard();
        let zero = traj_of(vec![PhaseState::new([0.0; 2], [0.0; 2]); 5], params);
        assert_eq!(boundedness_check(&zero, 1.0).unwrap(), Boundedness { bounded: true, first_escape: None });
        let mut states = vec![PhaseState::new([0.0; 2], [0.0; 2]); 5];
        states[3].q[0] = 3.0;
        let r = boundedness_check(&traj_of(states, params), 2.0).unwrap();
        assert_eq!(r, Boundedness { bounded: false, first_escape: Some(3) });
        assert!(boundedness_check(&zero, 0.0).is_err());
    }

    #[test]
    fn csv_headers() {
        let mut buf = Vec::new();
        write_energy_error_csv(&mut buf, 0.1, &[0.0, 1.5]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "t,percent\n0.0,0.0\n0.1,1.5\n");
        let mut buf = Vec::new();
        write_lyapunov_csv(&mut buf, &[LyapunovRow { alpha: 0.5, beta: 0.5, lambda_max: 0.01 }]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "alpha,beta,lambda_max\n0.5,0.5,0.01\n");
    }

    proptest! {
        #[test]
        fn leapfrog_jacobian_is_unimodular(
            x in proptest::array::uniform4(-0.5f64..0.5),
            alpha in 0.0f64..1.0,
            beta in 0.0f64..1.0,
        ) {
            let params = PotentialParams::new(alpha, beta);
            let s = PhaseState::from_array(x);
            let det = jacobian_determinant(|z| leapfrog_map(z, 0.1, &HenonHeiles, &params), &s, 1e-6);
            prop_assert!((det - 1.0).abs() <= 1e-5);
        }
    }
}
