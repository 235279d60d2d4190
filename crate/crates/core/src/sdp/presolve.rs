//! Removal of redundant constraints before the interior point solve.

use nalgebra::{DMatrix, DVector};

use super::{InfeasibilityCertificate, SdpProblem};

const RANK_TOL: f64 = 1e-10;
const CONSISTENCY_TOL: f64 = 1e-9;

pub(crate) struct Presolved {
    pub eq_keep: Vec<usize>,
    pub ineq_keep: Vec<usize>,
    pub certificate: Option<InfeasibilityCertificate>,
}

/// Symmetric vectorization with `⟨svec A, svec B⟩ = ⟨A, B⟩`.
pub(crate) fn svec(m: &DMatrix<f64>) -> DVector<f64> {
    let d = m.nrows();
    let mut out = Vec::with_capacity(d * (d + 1) / 2);
    for j in 0..d {
        out.push(m[(j, j)]);
        for i in j + 1..d {
            out.push(m[(i, j)] * std::f64::consts::SQRT_2);
        }
    }
    DVector::from_vec(out)
}

pub(crate) fn presolve(problem: &SdpProblem) -> Presolved {
    let n_eq = problem.equalities.len();
    let n_in = problem.inequalities.len();
    let eq_cert = |u: DVector<f64>| InfeasibilityCertificate {
        u,
        v: DVector::zeros(n_in),
    };

    // equalities: keep a linearly independent subset, in order
    let mut eq_keep: Vec<usize> = Vec::new();
    let mut basis: Vec<DVector<f64>> = Vec::new();
    for (i, (a, b)) in problem.equalities.iter().enumerate() {
        let va = svec(a);
        let na = va.norm();
        if na == 0.0 {
            if *b != 0.0 {
                let mut u = DVector::zeros(n_eq);
                u[i] = -1.0 / b;
                return Presolved {
                    eq_keep,
                    ineq_keep: Vec::new(),
                    certificate: Some(eq_cert(u)),
                };
            }
            continue;
        }
        if !basis.is_empty() {
            let k = DMatrix::from_columns(&basis);
            let coef = least_squares(&k, &va);
            let resid = (&va - &k * &coef).norm();
            if resid <= RANK_TOL * na {
                let implied: f64 = coef
                    .iter()
                    .zip(&eq_keep)
                    .map(|(c, &j)| c * problem.equalities[j].1)
                    .sum();
                let gap = b - implied;
                if gap.abs() > CONSISTENCY_TOL * (1.0 + b.abs()) {
                    // row_i − Σ c_j row_j vanishes but its right-hand side does not
                    let mut u = DVector::zeros(n_eq);
                    u[i] = 1.0;
                    for (c, &j) in coef.iter().zip(&eq_keep) {
                        u[j] -= c;
                    }
                    u /= -gap;
                    return Presolved {
                        eq_keep,
                        ineq_keep: Vec::new(),
                        certificate: Some(eq_cert(u)),
                    };
                }
                continue;
            }
        }
        basis.push(va);
        eq_keep.push(i);
    }

    // inequalities: drop vacuous rows and keep the tightest of parallel ones
    let mut ineq_keep: Vec<usize> = Vec::new();
    let mut normalized: Vec<(DVector<f64>, f64)> = Vec::new();
    for (j, (g, h)) in problem.inequalities.iter().enumerate() {
        let vg = svec(g);
        let ng = vg.norm();
        if ng == 0.0 {
            if *h < 0.0 {
                let mut v = DVector::zeros(n_in);
                v[j] = -1.0 / h;
                return Presolved {
                    eq_keep,
                    ineq_keep,
                    certificate: Some(InfeasibilityCertificate {
                        u: DVector::zeros(n_eq),
                        v,
                    }),
                };
            }
            continue;
        }
        let unit = vg / ng;
        let level = h / ng;
        match normalized
            .iter()
            .position(|(u, _)| (u - &unit).amax() <= RANK_TOL)
        {
            Some(p) => {
                if level < normalized[p].1 {
                    normalized[p].1 = level;
                    ineq_keep[p] = j;
                }
            }
            None => {
                normalized.push((unit, level));
                ineq_keep.push(j);
            }
        }
    }
    Presolved {
        eq_keep,
        ineq_keep,
        certificate: None,
    }
}

fn least_squares(k: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let svd = k.clone().svd(true, true);
    let smax = svd.singular_values.max();
    svd.solve(b, smax * 1e-13)
        .unwrap_or_else(|_| DVector::zeros(k.ncols()))
}
