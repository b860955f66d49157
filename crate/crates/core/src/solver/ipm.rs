use nalgebra::{DMatrix, DVector};

use super::{ConvexProgram, RowRef, Solution, SparseRow, Status, INFEASIBILITY_TOL};

const TOL: f64 = 1e-9;
const RELAXED_TOL: f64 = 1e-7;
/// Last resort when the residuals stall: the best iterate seen is kept if
/// it meets this tolerance.
const LOOSE_TOL: f64 = 1e-6;
const REFINE_STEPS: usize = 3;
const MAX_ITER: usize = 200;
const STEP_FRACTION: f64 = 0.99;
const DIVERGENCE: f64 = 1e12;

/// The program after row equilibration and objective scaling. Fixed
/// variables become equality rows appended after the original ones.
struct Scaled {
    n: usize,
    quad: Vec<(usize, usize, f64)>,
    c: Vec<f64>,
    a: Vec<SparseRow>,
    b: Vec<f64>,
    g: Vec<SparseRow>,
    h: Vec<f64>,
    lo_idx: Vec<usize>,
    lo_val: Vec<f64>,
    up_idx: Vec<usize>,
    up_val: Vec<f64>,
    obj_scale: f64,
    /// Original row index and scale factor for each scaled row.
    a_map: Vec<(Option<usize>, f64)>,
    g_map: Vec<(usize, f64)>,
}

enum Trivial {
    Infeasible(Vec<RowRef>),
}

fn scale(p: &ConvexProgram) -> Result<Scaled, Trivial> {
    let n = p.n;
    let mut bad = Vec::new();
    for i in 0..n {
        if p.lower[i] > p.upper[i] {
            return Err(Trivial::Infeasible(Vec::new()));
        }
    }

    let cmax = p.linear.iter().chain(p.quad.iter().map(|(_, _, q)| q)).fold(0.0_f64, |m, v| m.max(v.abs()));
    let obj_scale = cmax.max(1.0);

    let mut a = Vec::new();
    let mut b = Vec::new();
    let mut a_map = Vec::new();
    for (r, (row, &rhs)) in p.eq_rows.iter().zip(&p.eq_rhs).enumerate() {
        let m = row.max_abs();
        if m == 0.0 {
            if rhs.abs() > INFEASIBILITY_TOL * (1.0 + rhs.abs()) {
                bad.push(RowRef::Eq(r));
            }
            continue;
        }
        a.push(row.scaled(1.0 / m));
        b.push(rhs / m);
        a_map.push((Some(r), 1.0 / m));
    }
    let mut g = Vec::new();
    let mut h = Vec::new();
    let mut g_map = Vec::new();
    for (r, (row, &rhs)) in p.ineq_rows.iter().zip(&p.ineq_rhs).enumerate() {
        let m = row.max_abs();
        if m == 0.0 {
            if rhs < -INFEASIBILITY_TOL * (1.0 + rhs.abs()) {
                bad.push(RowRef::Ineq(r));
            }
            continue;
        }
        g.push(row.scaled(1.0 / m));
        h.push(rhs / m);
        g_map.push((r, 1.0 / m));
    }
    if !bad.is_empty() {
        return Err(Trivial::Infeasible(bad));
    }

    let mut lo_idx = Vec::new();
    let mut lo_val = Vec::new();
    let mut up_idx = Vec::new();
    let mut up_val = Vec::new();
    for i in 0..n {
        let (l, u) = (p.lower[i], p.upper[i]);
        if l.is_finite() && u.is_finite() && u - l <= 1e-12 * (1.0 + l.abs()) {
            a.push(SparseRow { idx: vec![i], val: vec![1.0] });
            b.push(0.5 * (l + u));
            a_map.push((None, 1.0));
            continue;
        }
        if l.is_finite() {
            lo_idx.push(i);
            lo_val.push(l);
        }
        if u.is_finite() {
            up_idx.push(i);
            up_val.push(u);
        }
    }

    Ok(Scaled {
        n,
        quad: p.quad.iter().map(|&(i, j, q)| (i, j, q / obj_scale)).collect(),
        c: p.linear.iter().map(|c| c / obj_scale).collect(),
        a,
        b,
        g,
        h,
        lo_idx,
        lo_val,
        up_idx,
        up_val,
        obj_scale,
        a_map,
        g_map,
    })
}

#[derive(Clone)]
struct Iterate {
    x: Vec<f64>,
    y: Vec<f64>,
    z: Vec<f64>,
    s: Vec<f64>,
    wl: Vec<f64>,
    vl: Vec<f64>,
    wu: Vec<f64>,
    vu: Vec<f64>,
}

enum Outcome {
    Converged(Iterate, usize),
    Failed { x_norm: f64, iterations: usize },
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn max_step(v: &[f64], dv: &[f64]) -> f64 {
    let mut alpha = f64::INFINITY;
    for (&vi, &di) in v.iter().zip(dv) {
        if di < 0.0 {
            alpha = alpha.min(-vi / di);
        }
    }
    alpha
}

impl Scaled {
    fn qx(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        for &(i, j, q) in &self.quad {
            out[i] += q * x[j];
            if i != j {
                out[j] += q * x[i];
            }
        }
        out
    }

    fn initial(&self) -> Iterate {
        let mut lo = vec![f64::NEG_INFINITY; self.n];
        let mut up = vec![f64::INFINITY; self.n];
        for (&i, &v) in self.lo_idx.iter().zip(&self.lo_val) {
            lo[i] = v;
        }
        for (&i, &v) in self.up_idx.iter().zip(&self.up_val) {
            up[i] = v;
        }
        let x: Vec<f64> = (0..self.n)
            .map(|i| match (lo[i].is_finite(), up[i].is_finite()) {
                (true, true) => 0.5 * (lo[i] + up[i]),
                (true, false) => lo[i] + 1.0,
                (false, true) => up[i] - 1.0,
                (false, false) => 0.0,
            })
            .collect();
        let s = self.g.iter().zip(&self.h).map(|(row, &h)| (h - row.dot(&x)).max(1.0)).collect::<Vec<_>>();
        let wl = self.lo_idx.iter().zip(&self.lo_val).map(|(&i, &l)| x[i] - l).collect::<Vec<_>>();
        let wu = self.up_idx.iter().zip(&self.up_val).map(|(&i, &u)| u - x[i]).collect::<Vec<_>>();
        Iterate {
            y: vec![0.0; self.a.len()],
            z: vec![1.0; self.g.len()],
            vl: vec![1.0; wl.len()],
            vu: vec![1.0; wu.len()],
            x,
            s,
            wl,
            wu,
        }
    }

    fn run(&self) -> Outcome {
        let n = self.n;
        let me = self.a.len();
        let mi = self.g.len();
        let ncomp = mi + self.lo_idx.len() + self.up_idx.len();
        let norm_b = 1.0 + inf_norm(&self.b);
        let norm_h = 1.0 + inf_norm(&self.h);
        let norm_c = 1.0 + inf_norm(&self.c);
        let norm_l = 1.0 + inf_norm(&self.lo_val);
        let norm_u = 1.0 + inf_norm(&self.up_val);

        let mut it = self.initial();
        let mut stalled = 0;
        let mut last_relaxed_ok = false;
        let mut best: Option<(f64, Iterate, usize)> = None;

        for iter in 0..MAX_ITER {
            let qx = self.qx(&it.x);
            let mut rd: Vec<f64> = qx.iter().zip(&self.c).map(|(a, b)| a + b).collect();
            for (row, &yi) in self.a.iter().zip(&it.y) {
                for (&i, &v) in row.idx.iter().zip(&row.val) {
                    rd[i] += v * yi;
                }
            }
            for (row, &zi) in self.g.iter().zip(&it.z) {
                for (&i, &v) in row.idx.iter().zip(&row.val) {
                    rd[i] += v * zi;
                }
            }
            for (k, &i) in self.lo_idx.iter().enumerate() {
                rd[i] -= it.vl[k];
            }
            for (k, &i) in self.up_idx.iter().enumerate() {
                rd[i] += it.vu[k];
            }
            let rp: Vec<f64> = self.a.iter().zip(&self.b).map(|(r, b)| r.dot(&it.x) - b).collect();
            let ri: Vec<f64> = self.g.iter().zip(&self.h).zip(&it.s).map(|((r, h), s)| r.dot(&it.x) + s - h).collect();
            let rl: Vec<f64> =
                self.lo_idx.iter().zip(&self.lo_val).zip(&it.wl).map(|((&i, l), w)| it.x[i] - w - l).collect();
            let ru: Vec<f64> =
                self.up_idx.iter().zip(&self.up_val).zip(&it.wu).map(|((&i, u), w)| it.x[i] + w - u).collect();

            let comp = dot(&it.s, &it.z) + dot(&it.wl, &it.vl) + dot(&it.wu, &it.vu);
            let mu = if ncomp > 0 { comp / ncomp as f64 } else { 0.0 };

            let xqx = dot(&it.x, &qx);
            let pobj = 0.5 * xqx + dot(&self.c, &it.x);
            let dobj = -0.5 * xqx - dot(&self.b, &it.y) - dot(&self.h, &it.z) + dot(&self.lo_val, &it.vl)
                - dot(&self.up_val, &it.vu);
            let pres = (inf_norm(&rp) / norm_b)
                .max(inf_norm(&ri) / norm_h)
                .max(inf_norm(&rl) / norm_l)
                .max(inf_norm(&ru) / norm_u);
            let dres = inf_norm(&rd) / norm_c;
            let gap = (pobj - dobj).abs() / (1.0 + pobj.abs());
            let comp_rel = comp / (1.0 + pobj.abs());

            if pres <= TOL && dres <= TOL && gap.min(comp_rel) <= TOL {
                return Outcome::Converged(it, iter);
            }
            let merit = pres.max(dres).max(gap.min(comp_rel));
            if best.as_ref().is_none_or(|b| merit < b.0) {
                best = Some((merit, it.clone(), iter));
            }
            last_relaxed_ok = pres <= RELAXED_TOL && dres <= RELAXED_TOL && gap.min(comp_rel) <= RELAXED_TOL;
            // Residuals can sit on a rounding floor slightly above TOL while
            // complementarity keeps shrinking; nothing more is gained then.
            if last_relaxed_ok && comp_rel <= 1e-13 {
                return Outcome::Converged(it, iter);
            }

            let x_norm = inf_norm(&it.x);
            let dual_norm = inf_norm(&it.y).max(inf_norm(&it.z)).max(inf_norm(&it.vl)).max(inf_norm(&it.vu));
            if x_norm > DIVERGENCE || dual_norm > DIVERGENCE || !pobj.is_finite() {
                return Outcome::Failed { x_norm, iterations: iter };
            }

            // Condensed Newton matrix.
            let mut m = DMatrix::<f64>::zeros(n, n);
            for &(i, j, q) in &self.quad {
                m[(i, j)] += q;
                if i != j {
                    m[(j, i)] += q;
                }
            }
            for (r, row) in self.g.iter().enumerate() {
                let w = it.z[r] / it.s[r];
                for (&ia, &va) in row.idx.iter().zip(&row.val) {
                    let wa = w * va;
                    for (&ib, &vb) in row.idx.iter().zip(&row.val) {
                        m[(ib, ia)] += wa * vb;
                    }
                }
            }
            for (k, &i) in self.lo_idx.iter().enumerate() {
                m[(i, i)] += it.vl[k] / it.wl[k];
            }
            for (k, &i) in self.up_idx.iter().enumerate() {
                m[(i, i)] += it.vu[k] / it.wu[k];
            }
            let Some(kkt) = Kkt::factor(m, &self.a) else {
                if last_relaxed_ok {
                    return Outcome::Converged(it, iter);
                }
                return fallback(best, x_norm, iter);
            };

            // Predictor.
            let rc_s: Vec<f64> = it.s.iter().zip(&it.z).map(|(s, z)| -s * z).collect();
            let rc_l: Vec<f64> = it.wl.iter().zip(&it.vl).map(|(w, v)| -w * v).collect();
            let rc_u: Vec<f64> = it.wu.iter().zip(&it.vu).map(|(w, v)| -w * v).collect();
            let aff = self.direction(&kkt, &it, &rd, &rp, &ri, &rl, &ru, &rc_s, &rc_l, &rc_u);
            let alpha_aff = self.step_length(&it, &aff).min(1.0);
            let mu_aff = if ncomp > 0 {
                let sa =
                    |v: &[f64], dv: &[f64]| -> Vec<f64> { v.iter().zip(dv).map(|(a, b)| a + alpha_aff * b).collect() };
                (dot(&sa(&it.s, &aff.s), &sa(&it.z, &aff.z))
                    + dot(&sa(&it.wl, &aff.wl), &sa(&it.vl, &aff.vl))
                    + dot(&sa(&it.wu, &aff.wu), &sa(&it.vu, &aff.vu)))
                    / ncomp as f64
            } else {
                0.0
            };
            let sigma = if mu > 0.0 { (mu_aff / mu).clamp(0.0, 1.0).powi(3) } else { 0.0 };

            // Corrector.
            let target = sigma * mu;
            let rc_s: Vec<f64> = (0..mi).map(|k| -it.s[k] * it.z[k] - aff.s[k] * aff.z[k] + target).collect();
            let rc_l: Vec<f64> =
                (0..it.wl.len()).map(|k| -it.wl[k] * it.vl[k] - aff.wl[k] * aff.vl[k] + target).collect();
            let rc_u: Vec<f64> =
                (0..it.wu.len()).map(|k| -it.wu[k] * it.vu[k] - aff.wu[k] * aff.vu[k] + target).collect();
            let dir = self.direction(&kkt, &it, &rd, &rp, &ri, &rl, &ru, &rc_s, &rc_l, &rc_u);
            let alpha = (STEP_FRACTION * self.step_length(&it, &dir)).min(1.0);
            if !alpha.is_finite() || alpha < 1e-10 {
                stalled += 1;
                if stalled >= 3 {
                    break;
                }
            } else {
                stalled = 0;
            }

            let upd = |v: &mut Vec<f64>, dv: &[f64]| {
                for (a, b) in v.iter_mut().zip(dv) {
                    *a += alpha * b;
                }
            };
            upd(&mut it.x, &dir.x);
            upd(&mut it.y, &dir.y);
            upd(&mut it.z, &dir.z);
            upd(&mut it.s, &dir.s);
            upd(&mut it.wl, &dir.wl);
            upd(&mut it.vl, &dir.vl);
            upd(&mut it.wu, &dir.wu);
            upd(&mut it.vu, &dir.vu);
            debug_assert!(me == it.y.len());
        }

        if last_relaxed_ok {
            return Outcome::Converged(it, MAX_ITER);
        }
        fallback(best, inf_norm(&it.x), MAX_ITER)
    }

    fn step_length(&self, it: &Iterate, d: &Iterate) -> f64 {
        max_step(&it.s, &d.s)
            .min(max_step(&it.z, &d.z))
            .min(max_step(&it.wl, &d.wl))
            .min(max_step(&it.vl, &d.vl))
            .min(max_step(&it.wu, &d.wu))
            .min(max_step(&it.vu, &d.vu))
    }

    #[allow(clippy::too_many_arguments)]
    fn direction(
        &self,
        kkt: &Kkt,
        it: &Iterate,
        rd: &[f64],
        rp: &[f64],
        ri: &[f64],
        rl: &[f64],
        ru: &[f64],
        rc_s: &[f64],
        rc_l: &[f64],
        rc_u: &[f64],
    ) -> Iterate {
        let mut rhs: Vec<f64> = rd.iter().map(|v| -v).collect();
        for (r, row) in self.g.iter().enumerate() {
            let t = (rc_s[r] + it.z[r] * ri[r]) / it.s[r];
            for (&i, &v) in row.idx.iter().zip(&row.val) {
                rhs[i] -= v * t;
            }
        }
        for (k, &i) in self.lo_idx.iter().enumerate() {
            rhs[i] += (rc_l[k] - it.vl[k] * rl[k]) / it.wl[k];
        }
        for (k, &i) in self.up_idx.iter().enumerate() {
            rhs[i] -= (rc_u[k] + it.vu[k] * ru[k]) / it.wu[k];
        }
        let (dx, dy) = kkt.solve(&self.a, DVector::from_vec(rhs), rp);
        let dx = dx.as_slice();

        let gdx: Vec<f64> = self.g.iter().map(|r| r.dot(dx)).collect();
        let ds: Vec<f64> = (0..self.g.len()).map(|r| -ri[r] - gdx[r]).collect();
        let dz: Vec<f64> = (0..self.g.len()).map(|r| (rc_s[r] - it.z[r] * ds[r]) / it.s[r]).collect();
        let dwl: Vec<f64> = self.lo_idx.iter().enumerate().map(|(k, &i)| dx[i] + rl[k]).collect();
        let dvl: Vec<f64> = (0..dwl.len()).map(|k| (rc_l[k] - it.vl[k] * dwl[k]) / it.wl[k]).collect();
        let dwu: Vec<f64> = self.up_idx.iter().enumerate().map(|(k, &i)| -ru[k] - dx[i]).collect();
        let dvu: Vec<f64> = (0..dwu.len()).map(|k| (rc_u[k] - it.vu[k] * dwu[k]) / it.wu[k]).collect();
        Iterate { x: dx.to_vec(), y: dy, z: dz, s: ds, wl: dwl, vl: dvl, wu: dwu, vu: dvu }
    }
}

fn fallback(best: Option<(f64, Iterate, usize)>, x_norm: f64, iterations: usize) -> Outcome {
    match best {
        Some((merit, it, at)) if merit <= LOOSE_TOL => Outcome::Converged(it, at),
        _ => Outcome::Failed { x_norm, iterations },
    }
}

/// Factorization of the condensed system `[M A'; A 0]` through a Cholesky
/// factor of `M` and one of the Schur complement `A M^-1 A'`.
struct Kkt {
    m: DMatrix<f64>,
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    m_inv_at: DMatrix<f64>,
    schur: Option<nalgebra::Cholesky<f64, nalgebra::Dyn>>,
}

impl Kkt {
    fn factor(m: DMatrix<f64>, a: &[SparseRow]) -> Option<Kkt> {
        let n = m.nrows();
        let diag_max = (0..n).fold(0.0_f64, |acc, i| acc.max(m[(i, i)].abs()));
        if !diag_max.is_finite() {
            return None;
        }
        let mut reg = 1e-11 + 1e-15 * diag_max;
        let chol = loop {
            let mut mr = m.clone_owned();
            for i in 0..n {
                mr[(i, i)] += reg;
            }
            if let Some(c) = nalgebra::Cholesky::new(mr) {
                break c;
            }
            reg *= 100.0;
            if reg > 1e-2 * (1.0 + diag_max) {
                return None;
            }
        };
        let me = a.len();
        let mut at = DMatrix::<f64>::zeros(n, me);
        for (r, row) in a.iter().enumerate() {
            for (&i, &v) in row.idx.iter().zip(&row.val) {
                at[(i, r)] += v;
            }
        }
        let m_inv_at = chol.solve(&at);
        let schur = if me > 0 {
            let s = at.transpose() * &m_inv_at;
            let sd = (0..me).fold(0.0_f64, |acc, i| acc.max(s[(i, i)].abs()));
            if !sd.is_finite() {
                return None;
            }
            let mut sreg = 1e-13 * (1.0 + sd);
            loop {
                let mut sr = s.clone();
                for i in 0..me {
                    sr[(i, i)] += sreg;
                }
                if let Some(c) = nalgebra::Cholesky::new(sr) {
                    break Some(c);
                }
                sreg *= 100.0;
                if sreg > 1e-2 * (1.0 + sd) {
                    return None;
                }
            }
        } else {
            None
        };
        Some(Kkt { m, chol, m_inv_at, schur })
    }

    /// Solves `M dx + A' dy = rhs`, `A dx = -rp`, refining against the
    /// unregularized `M` since the factors carry a diagonal shift.
    fn solve(&self, a: &[SparseRow], rhs: DVector<f64>, rp: &[f64]) -> (DVector<f64>, Vec<f64>) {
        let (mut dx, mut dy) = self.solve_once(a, &rhs, rp);
        let scale = 1.0 + rhs.amax() + rp.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let mut err = f64::INFINITY;
        for _ in 0..REFINE_STEPS {
            let mut r1 = &rhs - &self.m * &dx;
            for (row, &yv) in a.iter().zip(&dy) {
                for (&i, &v) in row.idx.iter().zip(&row.val) {
                    r1[i] -= v * yv;
                }
            }
            let r2: Vec<f64> = a.iter().zip(rp).map(|(row, &p)| -p - row.dot(dx.as_slice())).collect();
            let e = r1.amax().max(r2.iter().fold(0.0_f64, |m, v| m.max(v.abs())));
            if !(e < err) || e <= 1e-15 * scale {
                break;
            }
            err = e;
            let neg_r2: Vec<f64> = r2.iter().map(|v| -v).collect();
            let (cx, cy) = self.solve_once(a, &r1, &neg_r2);
            dx += cx;
            for (a, b) in dy.iter_mut().zip(&cy) {
                *a += b;
            }
        }
        (dx, dy)
    }

    fn solve_once(&self, a: &[SparseRow], rhs: &DVector<f64>, rp: &[f64]) -> (DVector<f64>, Vec<f64>) {
        let m_inv_r = self.chol.solve(rhs);
        match &self.schur {
            None => (m_inv_r, Vec::new()),
            Some(schur) => {
                let t =
                    DVector::from_iterator(a.len(), a.iter().zip(rp).map(|(row, &p)| row.dot(m_inv_r.as_slice()) + p));
                let dy = schur.solve(&t);
                let dx = m_inv_r - &self.m_inv_at * &dy;
                (dx, dy.as_slice().to_vec())
            }
        }
    }
}

/// Solves `p` and classifies failures through an elastic phase-1 program.
pub(super) fn solve_classified(p: &ConvexProgram) -> Solution {
    let scaled = match scale(p) {
        Ok(s) => s,
        Err(Trivial::Infeasible(rows)) => {
            let mut sol = Solution::failed(Status::Infeasible, p.n, 0);
            sol.infeasible_rows = rows;
            return sol;
        }
    };
    match scaled.run() {
        Outcome::Converged(it, iters) => unscale(p, &scaled, it, iters),
        Outcome::Failed { x_norm, iterations } => classify(p, x_norm, iterations),
    }
}

fn unscale(p: &ConvexProgram, sc: &Scaled, it: Iterate, iterations: usize) -> Solution {
    let mut y = vec![0.0; p.eq_rows.len()];
    for (k, &(orig, f)) in sc.a_map.iter().enumerate() {
        if let Some(r) = orig {
            y[r] = sc.obj_scale * f * it.y[k];
        }
    }
    let mut z = vec![0.0; p.ineq_rows.len()];
    for (k, &(r, f)) in sc.g_map.iter().enumerate() {
        z[r] = sc.obj_scale * f * it.z[k];
    }
    let mut x = it.x;
    // Snap tiny bound overshoot from the infeasible-start iterates.
    for (i, xi) in x.iter_mut().enumerate() {
        *xi = xi.clamp(p.lower[i], p.upper[i]);
    }
    Solution {
        status: Status::Optimal,
        objective: p.objective(&x),
        x,
        eq_duals: Some(y),
        ineq_duals: Some(z),
        iterations,
        infeasible_rows: Vec::new(),
    }
}

fn classify(p: &ConvexProgram, x_norm: f64, iterations: usize) -> Solution {
    let n = p.n;
    let me = p.eq_rows.len();
    let mi = p.ineq_rows.len();
    // x, then (t+, t-) per equality, then t per inequality.
    let mut ph = ConvexProgram::new(n + 2 * me + mi);
    for i in 0..n {
        ph.set_bounds(i, p.lower[i], p.upper[i]);
    }
    for k in n..ph.n {
        ph.set_bounds(k, 0.0, f64::INFINITY);
        ph.add_linear(k, 1.0);
    }
    for (r, (row, &b)) in p.eq_rows.iter().zip(&p.eq_rhs).enumerate() {
        let mut terms: Vec<(usize, f64)> = row.idx.iter().copied().zip(row.val.iter().copied()).collect();
        terms.push((n + 2 * r, 1.0));
        terms.push((n + 2 * r + 1, -1.0));
        ph.add_eq(terms, b);
    }
    for (r, (row, &h)) in p.ineq_rows.iter().zip(&p.ineq_rhs).enumerate() {
        let mut terms: Vec<(usize, f64)> = row.idx.iter().copied().zip(row.val.iter().copied()).collect();
        terms.push((n + 2 * me + r, -1.0));
        ph.add_le(terms, h);
    }
    // Keep otherwise free variables from drifting.
    for i in 0..n {
        if !p.lower[i].is_finite() && !p.upper[i].is_finite() {
            ph.add_square(i, 1e-9);
        }
    }
    let rhs_scale = 1.0 + p.eq_rhs.iter().chain(&p.ineq_rhs).fold(0.0_f64, |m, v| m.max(v.abs()));
    let tol = INFEASIBILITY_TOL * rhs_scale;

    let Ok(sc) = scale(&ph) else {
        return Solution::failed(Status::NumericalFailure, n, iterations);
    };
    match sc.run() {
        Outcome::Converged(it, _) => {
            let xs = it.x;
            let violation: f64 = xs[n..].iter().map(|t| t.max(0.0)).sum();
            if violation > tol {
                let mut sol = Solution::failed(Status::Infeasible, n, iterations);
                for r in 0..me {
                    if xs[n + 2 * r] + xs[n + 2 * r + 1] > tol {
                        sol.infeasible_rows.push(RowRef::Eq(r));
                    }
                }
                for r in 0..mi {
                    if xs[n + 2 * me + r] > tol {
                        sol.infeasible_rows.push(RowRef::Ineq(r));
                    }
                }
                sol
            } else if x_norm > DIVERGENCE * 1e-3 {
                Solution::failed(Status::Unbounded, n, iterations)
            } else {
                Solution::failed(Status::NumericalFailure, n, iterations)
            }
        }
        Outcome::Failed { .. } => Solution::failed(Status::NumericalFailure, n, iterations),
    }
}
