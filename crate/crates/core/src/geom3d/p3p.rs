//! Grunert-style P3P: distances along the three bearing rays are found from a
//! quartic, then the pose follows from rigid alignment.

use nalgebra::{Matrix3, Matrix4, Vector2, Vector3};

use super::{align_points, collinear, CameraIntrinsics, Pose};

/// Reprojection tolerance for accepting a solution, pixels.
pub(crate) const P3P_REPROJ_TOL: f64 = 1e-6;
const ROOT_IMAG_TOL: f64 = 1e-4;

/// All poses (at most four) mapping the three model points onto the three
/// pixels. Degenerate input yields an empty list.
pub fn p3p(
    pixels: &[Vector2<f64>; 3],
    points: &[Vector3<f64>; 3],
    intrinsics: &CameraIntrinsics,
) -> Vec<Pose> {
    if !pixels.iter().all(|p| p.x.is_finite() && p.y.is_finite())
        || !points.iter().all(|p| p.iter().all(|v| v.is_finite()))
        || collinear(&points[0], &points[1], &points[2])
    {
        return Vec::new();
    }
    let bearings = pixels.map(|px| intrinsics.unproject(&px).normalize());
    let mut out: Vec<Pose> = Vec::new();
    // Each cyclic ordering gives a different quartic; their union is robust
    // to ill-conditioned roots in any single one.
    for shift in 0..3 {
        let idx = [shift, (shift + 1) % 3, (shift + 2) % 3];
        let b = idx.map(|i| bearings[i]);
        let p = idx.map(|i| points[i]);
        for depths in solve_depths(&b, &p) {
            let mut d = [0.0; 3];
            for (j, &i) in idx.iter().enumerate() {
                d[i] = depths[j];
            }
            let cam: Vec<Vector3<f64>> = (0..3).map(|i| bearings[i] * d[i]).collect();
            let Ok(pose) = align_points(points, &cam) else {
                continue;
            };
            if !accept(&pose, pixels, points, intrinsics) {
                continue;
            }
            let dup = out.iter().any(|q| {
                (q.rot.matrix() - pose.rot.matrix()).abs().max() < 1e-7
                    && (q.t - pose.t).norm() < 1e-7 * (1.0 + pose.t.norm())
            });
            if !dup {
                out.push(pose);
            }
        }
    }
    out
}

fn accept(
    pose: &Pose,
    pixels: &[Vector2<f64>; 3],
    points: &[Vector3<f64>; 3],
    k: &CameraIntrinsics,
) -> bool {
    points.iter().zip(pixels).all(|(y, px)| {
        let c = pose.transform(y);
        c.z > 0.0
            && k
                .project_camera_point(&c)
                .map(|q| (q - px).norm() <= P3P_REPROJ_TOL)
                .unwrap_or(false)
    })
}

/// Candidate ray depths `(s1, s2, s3)` for unit bearings `j` and model
/// points `p`.
fn solve_depths(j: &[Vector3<f64>; 3], p: &[Vector3<f64>; 3]) -> Vec<[f64; 3]> {
    let a2 = (p[1] - p[2]).norm_squared();
    let b2 = (p[0] - p[2]).norm_squared();
    let c2 = (p[0] - p[1]).norm_squared();
    let ca = j[1].dot(&j[2]);
    let cb = j[0].dot(&j[2]);
    let cg = j[0].dot(&j[1]);
    let k = (a2 - c2) / b2;
    let r = c2 / b2;

    // s2 = u s1, s3 = v s1; u = N(v) / D(v)
    let n = [1.0 + k, -2.0 * k * cb, k - 1.0];
    let d = [2.0 * cg, -2.0 * ca];
    let e = [1.0, -2.0 * cb, 1.0];
    let d2 = poly_mul(&d, &d);
    let quartic = poly_add(
        &poly_add(&d2, &poly_mul(&n, &n)),
        &poly_add(
            &poly_scale(&poly_mul(&n, &d), -2.0 * cg),
            &poly_scale(&poly_mul(&e, &d2), -r),
        ),
    );

    let geom = Geometry { a2, b2, c2, ca, cb, cg };
    let mut out = Vec::new();
    for v in real_roots(&quartic) {
        if !(v > 0.0) {
            continue;
        }
        let ev = poly_eval(&e, v);
        if !(ev > 0.0) {
            continue;
        }
        let dv = poly_eval(&d, v);
        let nv = poly_eval(&n, v);
        let mut us = Vec::with_capacity(2);
        if dv.abs() > 1e-10 * (1.0 + nv.abs()) {
            us.push(nv / dv);
        } else {
            // u from 1 + u² − 2u cosγ = r E(v)
            let disc = cg * cg - 1.0 + r * ev;
            if disc >= 0.0 {
                us.push(cg + disc.sqrt());
                us.push(cg - disc.sqrt());
            }
        }
        let s1 = (b2 / ev).sqrt();
        for u in us {
            if !(u > 0.0) {
                continue;
            }
            if let Some(s) = geom.polish([s1, u * s1, v * s1]) {
                out.push(s);
            }
        }
    }
    out
}

struct Geometry {
    a2: f64,
    b2: f64,
    c2: f64,
    ca: f64,
    cb: f64,
    cg: f64,
}

impl Geometry {
    fn residual(&self, s: &[f64; 3]) -> Vector3<f64> {
        Vector3::new(
            s[1] * s[1] + s[2] * s[2] - 2.0 * s[1] * s[2] * self.ca - self.a2,
            s[0] * s[0] + s[2] * s[2] - 2.0 * s[0] * s[2] * self.cb - self.b2,
            s[0] * s[0] + s[1] * s[1] - 2.0 * s[0] * s[1] * self.cg - self.c2,
        )
    }

    /// Newton on the three law-of-cosines equations.
    fn polish(&self, mut s: [f64; 3]) -> Option<[f64; 3]> {
        let mut r = self.residual(&s);
        for _ in 0..8 {
            let jac = Matrix3::new(
                0.0,
                2.0 * (s[1] - s[2] * self.ca),
                2.0 * (s[2] - s[1] * self.ca),
                2.0 * (s[0] - s[2] * self.cb),
                0.0,
                2.0 * (s[2] - s[0] * self.cb),
                2.0 * (s[0] - s[1] * self.cg),
                2.0 * (s[1] - s[0] * self.cg),
                0.0,
            );
            let Some(step) = jac.lu().solve(&r) else { break };
            let cand = [s[0] - step[0], s[1] - step[1], s[2] - step[2]];
            let rc = self.residual(&cand);
            if !(rc.norm() < r.norm()) {
                break;
            }
            s = cand;
            r = rc;
        }
        let scale = self.a2.max(self.b2).max(self.c2);
        (s.iter().all(|v| *v > 0.0) && r.norm() <= 1e-6 * scale).then_some(s)
    }
}

/// Real roots of a polynomial given by ascending coefficients (degree ≤ 4).
fn real_roots(coef: &[f64]) -> Vec<f64> {
    let scale = coef.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    if scale == 0.0 || !scale.is_finite() {
        return Vec::new();
    }
    let mut c: Vec<f64> = coef.iter().map(|v| v / scale).collect();
    while c.len() > 1 && c.last().is_some_and(|v| v.abs() < 1e-13) {
        c.pop();
    }
    let deg = c.len() - 1;
    let raw: Vec<f64> = match deg {
        0 => Vec::new(),
        1 => vec![-c[0] / c[1]],
        2 => {
            let disc = c[1] * c[1] - 4.0 * c[2] * c[0];
            if disc < 0.0 {
                if disc > -1e-12 * c[1] * c[1] {
                    vec![-c[1] / (2.0 * c[2])]
                } else {
                    Vec::new()
                }
            } else {
                let q = -0.5 * (c[1] + c[1].signum() * disc.sqrt());
                let mut r = vec![];
                if q != 0.0 {
                    r.push(c[0] / q);
                }
                r.push(q / c[2]);
                r
            }
        }
        _ => companion_roots(&c),
    };
    raw.into_iter()
        .filter(|v| v.is_finite())
        .map(|v| newton_root(&c, v))
        .collect()
}

fn companion_roots(c: &[f64]) -> Vec<f64> {
    let deg = c.len() - 1;
    let lead = c[deg];
    let mut m = Matrix4::<f64>::zeros();
    // pad lower-degree polynomials with zero roots that are filtered later
    for i in 1..4 {
        m[(i, i - 1)] = 1.0;
    }
    let mut padded = [0.0; 4];
    for i in 0..deg {
        padded[i + (4 - deg)] = c[i] / lead;
    }
    for i in 0..4 {
        m[(i, 3)] = -padded[i];
    }
    m.complex_eigenvalues()
        .iter()
        .filter(|z| z.im.abs() <= ROOT_IMAG_TOL * (1.0 + z.re.abs()))
        .map(|z| z.re)
        .collect()
}

fn newton_root(c: &[f64], mut x: f64) -> f64 {
    for _ in 0..6 {
        let (f, df) = poly_eval_d(c, x);
        if df == 0.0 {
            break;
        }
        let nx = x - f / df;
        if !nx.is_finite() || poly_eval(c, nx).abs() > f.abs() {
            break;
        }
        x = nx;
    }
    x
}

fn poly_mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

fn poly_add(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len().max(b.len())];
    for (i, x) in a.iter().enumerate() {
        out[i] += x;
    }
    for (i, y) in b.iter().enumerate() {
        out[i] += y;
    }
    out
}

fn poly_scale(a: &[f64], s: f64) -> Vec<f64> {
    a.iter().map(|x| x * s).collect()
}

fn poly_eval(c: &[f64], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, v| acc * x + v)
}

fn poly_eval_d(c: &[f64], x: f64) -> (f64, f64) {
    let mut f = 0.0;
    let mut df = 0.0;
    for v in c.iter().rev() {
        df = df * x + f;
        f = f * x + v;
    }
    (f, df)
}
