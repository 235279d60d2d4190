//! Homogeneous self-dual interior point iteration.
//!
//! Internally the problem is the minimization `min ⟨c, x⟩ s.t. 𝒜x = b,
//! x ∈ S^d₊ × R^l₊` with `c = (−C/‖C‖, 0)`, row-normalized constraints and one
//! slack per inequality. The embedding variables are `(x, y, z, τ, κ)`.

use nalgebra::{DMatrix, DVector};

use super::presolve::Presolved;
use super::{InfeasibilityCertificate, SdpProblem, SdpStatus};

const STEP_FRACTION: f64 = 0.99;
const MAX_STALLS: usize = 3;
const REFINE_STEPS: usize = 2;
/// Iterations without a new smallest residual before giving up.
const MAX_NO_PROGRESS: usize = 5;

/// A point of the cone `S^d × R^l`.
#[derive(Clone, Debug)]
struct Pt {
    s: DMatrix<f64>,
    l: DVector<f64>,
}

impl Pt {
    fn zeros(d: usize, l: usize) -> Self {
        Self {
            s: DMatrix::zeros(d, d),
            l: DVector::zeros(l),
        }
    }

    fn identity(d: usize, l: usize) -> Self {
        Self {
            s: DMatrix::identity(d, d),
            l: DVector::from_element(l, 1.0),
        }
    }

    fn dot(&self, o: &Pt) -> f64 {
        self.s.dot(&o.s) + self.l.dot(&o.l)
    }

    fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    fn axpy(&self, a: f64, o: &Pt) -> Pt {
        Pt {
            s: &self.s + &o.s * a,
            l: &self.l + &o.l * a,
        }
    }

    fn scale(&self, a: f64) -> Pt {
        Pt {
            s: &self.s * a,
            l: &self.l * a,
        }
    }

    fn is_finite(&self) -> bool {
        self.s.iter().chain(self.l.iter()).all(|v| v.is_finite())
    }
}

struct StdForm {
    d: usize,
    l: usize,
    rows: Vec<DMatrix<f64>>,
    /// Slack index of each row, if it came from an inequality.
    slack: Vec<Option<usize>>,
    norms: Vec<f64>,
    b: DVector<f64>,
    c: Pt,
    cscale: f64,
}

impl StdForm {
    fn build(problem: &SdpProblem, pre: &Presolved) -> Self {
        let d = problem.dim;
        let l = pre.ineq_keep.len();
        let mut rows = Vec::new();
        let mut slack = Vec::new();
        let mut norms = Vec::new();
        let mut b = Vec::new();
        for &i in &pre.eq_keep {
            let (a, bi) = &problem.equalities[i];
            let n = a.norm();
            rows.push(a / n);
            slack.push(None);
            norms.push(n);
            b.push(bi / n);
        }
        for (j, &i) in pre.ineq_keep.iter().enumerate() {
            let (g, h) = &problem.inequalities[i];
            let n = g.norm();
            rows.push(g / n);
            slack.push(Some(j));
            norms.push(n);
            b.push(h / n);
        }
        let cscale = problem.objective.norm().max(1.0);
        Self {
            d,
            l,
            rows,
            slack,
            norms,
            b: DVector::from_vec(b),
            c: Pt {
                s: -&problem.objective / cscale,
                l: DVector::zeros(l),
            },
            cscale,
        }
    }

    fn m(&self) -> usize {
        self.rows.len()
    }

    fn apply(&self, x: &Pt) -> DVector<f64> {
        DVector::from_iterator(
            self.m(),
            self.rows.iter().zip(&self.slack).map(|(f, s)| {
                f.dot(&x.s) + s.map_or(0.0, |j| x.l[j])
            }),
        )
    }

    fn adjoint(&self, y: &DVector<f64>) -> Pt {
        let mut out = Pt::zeros(self.d, self.l);
        for (i, f) in self.rows.iter().enumerate() {
            out.s += f * y[i];
            if let Some(j) = self.slack[i] {
                out.l[j] += y[i];
            }
        }
        out
    }
}

/// Nesterov-Todd scaling at a strictly feasible pair.
struct Scaling {
    g: DMatrix<f64>,
    g_inv: DMatrix<f64>,
    w: DMatrix<f64>,
    lambda: DVector<f64>,
    dl: DVector<f64>,
}

impl Scaling {
    fn new(x: &Pt, z: &Pt) -> Option<Self> {
        let lx = x.s.clone().cholesky()?.l();
        let lz = z.s.clone().cholesky()?.l();
        let svd = (lz.transpose() * &lx).svd(true, true);
        let u_v = svd.v_t?.transpose();
        let sig = svd.singular_values;
        if sig.iter().any(|s| !(*s > 0.0)) {
            return None;
        }
        let d = sig.len();
        let isq = DMatrix::from_diagonal(&sig.map(|s| 1.0 / s.sqrt()));
        let sq = DMatrix::from_diagonal(&sig.map(|s| s.sqrt()));
        let g = &lx * &u_v * isq;
        let lx_inv = lx.solve_lower_triangular(&DMatrix::identity(d, d))?;
        let g_inv = sq * u_v.transpose() * lx_inv;
        let w = &g * g.transpose();
        let dl = x.l.component_div(&z.l);
        Some(Self {
            g,
            g_inv,
            w,
            lambda: sig,
            dl,
        })
    }

    /// `D(z) = (W z W, (x/z) ∘ z)`.
    fn apply(&self, z: &Pt) -> Pt {
        Pt {
            s: &self.w * &z.s * &self.w,
            l: self.dl.component_mul(&z.l),
        }
    }
}

#[derive(Clone)]
struct State {
    x: Pt,
    y: DVector<f64>,
    z: Pt,
    tau: f64,
    kappa: f64,
}

struct Dir {
    x: Pt,
    y: DVector<f64>,
    z: Pt,
    tau: f64,
    kappa: f64,
}

pub(crate) struct IpmOutput {
    pub status: SdpStatus,
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub v: DVector<f64>,
    pub iterations: usize,
    pub certificate: Option<InfeasibilityCertificate>,
}

struct Residuals {
    rp: DVector<f64>,
    rd: Pt,
    rg: f64,
    mu: f64,
}

pub(crate) fn solve(problem: &SdpProblem, pre: &Presolved, max_iters: usize, tol: f64, stall_tol: f64) -> IpmOutput {
    let sf = StdForm::build(problem, pre);
    let (d, l, m) = (sf.d, sf.l, sf.m());
    let nu = (d + l) as f64;
    let bnorm = sf.b.norm();
    let cnorm = sf.c.norm();

    let mut st = State {
        x: Pt::identity(d, l),
        y: DVector::zeros(m),
        z: Pt::identity(d, l),
        tau: 1.0,
        kappa: 1.0,
    };
    let mut stalls = 0;
    let mut iterations = 0;

    let residuals = |st: &State| -> Residuals {
        let rp = &sf.b * st.tau - sf.apply(&st.x);
        let rd = sf.c.scale(st.tau).axpy(-1.0, &sf.adjoint(&st.y)).axpy(-1.0, &st.z);
        let rg = sf.b.dot(&st.y) - sf.c.dot(&st.x) - st.kappa;
        let mu = (st.x.dot(&st.z) + st.tau * st.kappa) / (nu + 1.0);
        Residuals { rp, rd, rg, mu }
    };

    // returns Some(status) when a termination criterion holds at `t`
    let check = |st: &State, r: &Residuals, t: f64| -> Option<SdpStatus> {
        let pres = r.rp.norm() / st.tau / (1.0 + bnorm);
        let dres = r.rd.norm() / st.tau / (1.0 + cnorm);
        let pobj = sf.c.dot(&st.x) / st.tau;
        let dobj = sf.b.dot(&st.y) / st.tau;
        let gap = (pobj - dobj).abs() / (1.0 + pobj.abs() + dobj.abs());
        if pres <= t && dres <= t && gap <= t {
            return Some(SdpStatus::Optimal);
        }
        let by = sf.b.dot(&st.y);
        if by > 0.0 {
            let ray = sf.adjoint(&st.y).axpy(1.0, &st.z).norm();
            if ray / by <= t {
                return Some(SdpStatus::PrimalInfeasible);
            }
        }
        let cx = sf.c.dot(&st.x);
        if cx < 0.0 && sf.apply(&st.x).norm() / (-cx) <= t {
            return Some(SdpStatus::DualInfeasible);
        }
        None
    };

    let mut status = None;
    let mut best: Option<(f64, State)> = None;
    let mut since_best = 0;
    loop {
        let r = residuals(&st);
        if let Some(s) = check(&st, &r, tol) {
            status = Some(s);
            break;
        }
        // embedding residuals decrease monotonically in exact arithmetic
        let merit = r.rp.norm().max(r.rd.norm()).max(r.rg.abs());
        if best.as_ref().is_none_or(|(m, _)| merit < *m) {
            best = Some((merit, st.clone()));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= MAX_NO_PROGRESS {
                break;
            }
        }
        if iterations >= max_iters {
            break;
        }
        iterations += 1;

        let Some(sc) = Scaling::new(&st.x, &st.z) else {
            break;
        };
        let Some(newton) = Newton::new(&sf, &sc, &st) else {
            break;
        };

        // predictor
        let rc_aff = st.x.scale(-1.0);
        let rk_aff = -st.tau * st.kappa;
        let Some(aff) = newton.direction(&r, 1.0, &rc_aff, rk_aff) else {
            break;
        };
        let a_aff = step_length(&st, &aff).min(1.0);
        let mu_aff = (st.x.axpy(a_aff, &aff.x).dot(&st.z.axpy(a_aff, &aff.z))
            + (st.tau + a_aff * aff.tau) * (st.kappa + a_aff * aff.kappa))
            / (nu + 1.0);
        let sigma = (mu_aff / r.mu).clamp(0.0, 1.0).powi(3);

        // corrector
        let smu = sigma * r.mu;
        let dxs = &sc.g_inv * &aff.x.s * sc.g_inv.transpose();
        let dzs = sc.g.transpose() * &aff.z.s * &sc.g;
        let cross = (&dxs * &dzs + &dzs * &dxs) * 0.5;
        let mut hs = -cross;
        for i in 0..d {
            hs[(i, i)] += smu - sc.lambda[i] * sc.lambda[i];
        }
        for i in 0..d {
            for j in 0..d {
                hs[(i, j)] *= 2.0 / (sc.lambda[i] + sc.lambda[j]);
            }
        }
        let rc = Pt {
            s: &sc.g * hs * sc.g.transpose(),
            l: DVector::from_iterator(
                l,
                (0..l).map(|j| (smu - st.x.l[j] * st.z.l[j] - aff.x.l[j] * aff.z.l[j]) / st.z.l[j]),
            ),
        };
        let rk = smu - st.tau * st.kappa - aff.tau * aff.kappa;
        let Some(dir) = newton.direction(&r, 1.0 - sigma, &rc, rk) else {
            break;
        };
        let alpha = (STEP_FRACTION * step_length(&st, &dir)).min(1.0);
        if !(alpha > 1e-10) {
            stalls += 1;
            if stalls >= MAX_STALLS {
                break;
            }
            continue;
        }
        let next = State {
            x: st.x.axpy(alpha, &dir.x),
            y: &st.y + &dir.y * alpha,
            z: st.z.axpy(alpha, &dir.z),
            tau: st.tau + alpha * dir.tau,
            kappa: st.kappa + alpha * dir.kappa,
        };
        if !(next.x.is_finite() && next.z.is_finite() && next.tau > 0.0 && next.kappa > 0.0) {
            break;
        }
        st = next;
        // keep the PSD blocks exactly symmetric
        st.x.s = (&st.x.s + st.x.s.transpose()) * 0.5;
        st.z.s = (&st.z.s + st.z.s.transpose()) * 0.5;
    }

    let status = match status {
        Some(s) => s,
        None => {
            // accept the current or the most accurate iterate at the looser tolerance
            let fallback = |st: &State| check(st, &residuals(st), stall_tol);
            if let Some(s) = fallback(&st) {
                s
            } else if let Some(s) = best.as_ref().and_then(|(_, b)| fallback(b)) {
                st = best.expect("checked above").1;
                s
            } else if iterations >= max_iters {
                SdpStatus::MaxIterations
            } else {
                SdpStatus::NumericalFailure
            }
        }
    };
    finish(problem, pre, &sf, &st, status, iterations)
}

fn finish(
    problem: &SdpProblem,
    pre: &Presolved,
    sf: &StdForm,
    st: &State,
    status: SdpStatus,
    iterations: usize,
) -> IpmOutput {
    let n_eq = problem.equalities.len();
    let n_in = problem.inequalities.len();
    let n_keep_eq = pre.eq_keep.len();
    let mut y = DVector::zeros(n_eq);
    let mut v = DVector::zeros(n_in);
    let mut certificate = None;
    let x = &st.x.s / st.tau;

    match status {
        SdpStatus::PrimalInfeasible => {
            // −𝒜*y ∈ K and bᵀy > 0: rescale to bᵀu + hᵀv = −1
            let by = sf.b.dot(&st.y);
            let mut u = DVector::zeros(n_eq);
            let mut w = DVector::zeros(n_in);
            for (r, &i) in pre.eq_keep.iter().enumerate() {
                u[i] = -st.y[r] / sf.norms[r] / by;
            }
            for (j, &i) in pre.ineq_keep.iter().enumerate() {
                let r = n_keep_eq + j;
                w[i] = (-st.y[r] / sf.norms[r] / by).max(0.0);
            }
            certificate = Some(InfeasibilityCertificate { u, v: w });
        }
        _ => {
            // maximization multipliers: y_orig = −‖C‖·y/‖row‖
            for (r, &i) in pre.eq_keep.iter().enumerate() {
                y[i] = -sf.cscale * st.y[r] / st.tau / sf.norms[r];
            }
            for (j, &i) in pre.ineq_keep.iter().enumerate() {
                let r = n_keep_eq + j;
                v[i] = -sf.cscale * st.y[r] / st.tau / sf.norms[r];
            }
        }
    }
    IpmOutput {
        status,
        x,
        y,
        v,
        iterations,
        certificate,
    }
}

/// Factorized Newton system for one iteration.
struct Newton<'a> {
    sf: &'a StdForm,
    sc: &'a Scaling,
    tau: f64,
    kappa: f64,
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    g: DVector<f64>,
    q: DVector<f64>,
    den: f64,
}

impl<'a> Newton<'a> {
    fn new(sf: &'a StdForm, sc: &'a Scaling, st: &State) -> Option<Self> {
        let m = sf.m();
        let wfw: Vec<DMatrix<f64>> = sf.rows.iter().map(|f| &sc.w * f * &sc.w).collect();
        let mut mm = DMatrix::zeros(m, m);
        for i in 0..m {
            for j in 0..=i {
                let mut v = sf.rows[i].dot(&wfw[j]);
                if i == j {
                    if let Some(s) = sf.slack[i] {
                        v += sc.dl[s];
                    }
                }
                mm[(i, j)] = v;
                mm[(j, i)] = v;
            }
        }
        let scale = mm.diagonal().amax().max(1e-300);
        let chol = [0.0, 1e-14, 1e-12, 1e-10, 1e-8].iter().find_map(|&reg| {
            let mut r = mm.clone();
            for i in 0..m {
                r[(i, i)] += reg * scale;
            }
            r.cholesky()
        });
        let chol = chol?;
        let dc = sc.apply(&sf.c);
        let g = sf.apply(&dc);
        let mb = chol.solve(&sf.b);
        let mg = chol.solve(&g);
        let q = &mb + &mg;
        // ⟨c, Dc⟩ − gᵀM⁻¹g written as ⟨v, Dv⟩ with v = c − 𝒜*M⁻¹g
        let v = sf.c.axpy(-1.0, &sf.adjoint(&mg));
        let gv = sc.g.transpose() * &v.s * &sc.g;
        let proj = gv.norm_squared() + v.l.component_mul(&v.l).dot(&sc.dl);
        let den = sf.b.dot(&mb) + proj + st.kappa / st.tau;
        if !(den.is_finite() && den > 0.0) {
            return None;
        }
        Some(Self {
            sf,
            sc,
            tau: st.tau,
            kappa: st.kappa,
            chol,
            g,
            q,
            den,
        })
    }

    /// Newton direction for `η` times the current residuals with
    /// complementarity targets `rc` and `rk`, refined against the exact
    /// linear operators.
    fn direction(&self, r: &Residuals, eta: f64, rc: &Pt, rk: f64) -> Option<Dir> {
        let rhs = Rhs {
            e1: &r.rp * eta,
            e2: r.rd.scale(eta),
            e3: -eta * r.rg,
            e4: rc.clone(),
            e5: rk,
        };
        let mut dir = self.solve(&rhs);
        for _ in 0..REFINE_STEPS {
            let res = self.residual(&rhs, &dir);
            let corr = self.solve(&res);
            dir = Dir {
                x: dir.x.axpy(1.0, &corr.x),
                y: &dir.y + &corr.y,
                z: dir.z.axpy(1.0, &corr.z),
                tau: dir.tau + corr.tau,
                kappa: dir.kappa + corr.kappa,
            };
        }
        let ok = dir.x.is_finite()
            && dir.z.is_finite()
            && dir.y.iter().all(|v| v.is_finite())
            && dir.tau.is_finite()
            && dir.kappa.is_finite();
        ok.then(|| Dir {
            x: Pt {
                s: (&dir.x.s + dir.x.s.transpose()) * 0.5,
                l: dir.x.l,
            },
            y: dir.y,
            z: Pt {
                s: (&dir.z.s + dir.z.s.transpose()) * 0.5,
                l: dir.z.l,
            },
            tau: dir.tau,
            kappa: dir.kappa,
        })
    }

    /// Solves
    ///
    /// ```text
    /// 𝒜Δx − bΔτ = e1,  𝒜*Δy + Δz − cΔτ = e2,  bᵀΔy − ⟨c,Δx⟩ − Δκ = e3,
    /// Δx + D(Δz) = e4,  κΔτ + τΔκ = e5.
    /// ```
    fn solve(&self, e: &Rhs) -> Dir {
        let sf = self.sf;
        let base = e.e4.axpy(-1.0, &self.sc.apply(&e.e2));
        let p = self.chol.solve(&(&e.e1 - sf.apply(&base)));
        let num = e.e3 - sf.b.dot(&p) + sf.c.dot(&base) + self.g.dot(&p) + e.e5 / self.tau;
        let dtau = num / self.den;
        let dy = &p + &self.q * dtau;
        let aty = sf.adjoint(&dy);
        let dz = e.e2.axpy(dtau, &sf.c).axpy(-1.0, &aty);
        let dx = e.e4.axpy(-1.0, &self.sc.apply(&dz));
        let dkappa = (e.e5 - self.kappa * dtau) / self.tau;
        Dir {
            x: dx,
            y: dy,
            z: dz,
            tau: dtau,
            kappa: dkappa,
        }
    }

    fn residual(&self, e: &Rhs, d: &Dir) -> Rhs {
        let sf = self.sf;
        Rhs {
            e1: &e.e1 - (sf.apply(&d.x) - &sf.b * d.tau),
            e2: e.e2.axpy(-1.0, &sf.adjoint(&d.y).axpy(1.0, &d.z).axpy(-d.tau, &sf.c)),
            e3: e.e3 - (sf.b.dot(&d.y) - sf.c.dot(&d.x) - d.kappa),
            e4: e.e4.axpy(-1.0, &d.x.axpy(1.0, &self.sc.apply(&d.z))),
            e5: e.e5 - (self.kappa * d.tau + self.tau * d.kappa),
        }
    }
}

struct Rhs {
    e1: DVector<f64>,
    e2: Pt,
    e3: f64,
    e4: Pt,
    e5: f64,
}

/// Largest `α` keeping all cone variables nonnegative.
fn step_length(st: &State, dir: &Dir) -> f64 {
    let mut a = f64::INFINITY;
    a = a.min(psd_step(&st.x.s, &dir.x.s));
    a = a.min(psd_step(&st.z.s, &dir.z.s));
    for (v, dv) in st.x.l.iter().zip(dir.x.l.iter()).chain(st.z.l.iter().zip(dir.z.l.iter())) {
        if *dv < 0.0 {
            a = a.min(-v / dv);
        }
    }
    for (v, dv) in [(st.tau, dir.tau), (st.kappa, dir.kappa)] {
        if dv < 0.0 {
            a = a.min(-v / dv);
        }
    }
    a
}

fn psd_step(x: &DMatrix<f64>, dx: &DMatrix<f64>) -> f64 {
    let d = x.nrows();
    if d == 0 {
        return f64::INFINITY;
    }
    let Some(chol) = x.clone().cholesky() else {
        return 0.0;
    };
    let l = chol.l();
    let Some(li) = l.solve_lower_triangular(&DMatrix::identity(d, d)) else {
        return 0.0;
    };
    let m = &li * dx * li.transpose();
    let m = (&m + m.transpose()) * 0.5;
    let lmin = m.symmetric_eigenvalues().min();
    if lmin < 0.0 {
        -1.0 / lmin
    } else {
        f64::INFINITY
    }
}
