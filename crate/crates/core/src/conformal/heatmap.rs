//! Per-keypoint probability grids.
//!
//! Storage is sparse: each channel keeps its strictly positive pixels sorted
//! by linear index `j = y·W + x`. Every other pixel has probability zero.
//! Pixel `j` sits at `(x, y) = (j mod W, j div W)`.

use std::io::{Read, Write};

use nalgebra::{Matrix2, Vector2};

use super::ConformalError;

const PKHM_MAGIC: &[u8; 8] = b"PKHM0001";

#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    width: usize,
    height: usize,
    channels: Vec<Vec<(u32, f64)>>,
}

impl Heatmap {
    /// Builds a heatmap from dense channel-major, row-major data. Negative
    /// and non-finite entries are clamped to zero and each channel is
    /// renormalized.
    pub fn from_dense(
        channels: usize,
        height: usize,
        width: usize,
        data: &[f64],
    ) -> Result<Self, ConformalError> {
        let hw = check_dims(height, width)?;
        if data.len() != channels * hw {
            return Err(ConformalError::ShapeMismatch {
                expected: channels * hw,
                got: data.len(),
            });
        }
        let sparse = data
            .chunks(hw.max(1))
            .take(channels)
            .map(|c| {
                c.iter()
                    .enumerate()
                    .map(|(j, &v)| (j, v))
                    .collect::<Vec<_>>()
            })
            .collect();
        Self::from_sparse(width, height, sparse)
    }

    /// Builds a heatmap from `(linear index, weight)` lists. Duplicate
    /// indices are summed; weights are sanitized and renormalized as in
    /// [`Heatmap::from_dense`].
    pub fn from_sparse(
        width: usize,
        height: usize,
        channels: Vec<Vec<(usize, f64)>>,
    ) -> Result<Self, ConformalError> {
        let hw = check_dims(height, width)?;
        if channels.is_empty() {
            return Err(ConformalError::InvalidHeatmap("no channels".into()));
        }
        let mut out = Vec::with_capacity(channels.len());
        for (k, mut ch) in channels.into_iter().enumerate() {
            if let Some(&(j, _)) = ch.iter().find(|(j, _)| *j >= hw) {
                return Err(ConformalError::InvalidHeatmap(format!(
                    "channel {k}: pixel index {j} outside {width}x{height}"
                )));
            }
            ch.sort_by_key(|(j, _)| *j);
            let mut merged: Vec<(u32, f64)> = Vec::with_capacity(ch.len());
            for (j, v) in ch {
                let v = if v.is_finite() && v > 0.0 { v } else { 0.0 };
                match merged.last_mut() {
                    Some(last) if last.0 as usize == j => last.1 += v,
                    _ => merged.push((j as u32, v)),
                }
            }
            merged.retain(|(_, v)| *v > 0.0);
            let total: f64 = merged.iter().map(|(_, v)| v).sum();
            if !(total > 0.0 && total.is_finite()) {
                return Err(ConformalError::InvalidHeatmap(format!(
                    "channel {k} has no positive mass"
                )));
            }
            for e in &mut merged {
                e.1 /= total;
            }
            out.push(merged);
        }
        Ok(Self {
            width,
            height,
            channels: out,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn num_keypoints(&self) -> usize {
        self.channels.len()
    }

    /// Positive entries of channel `k` as `(linear index, probability)`.
    pub fn entries(&self, k: usize) -> &[(u32, f64)] {
        &self.channels[k]
    }

    pub fn prob(&self, k: usize, x: usize, y: usize) -> f64 {
        let j = (y * self.width + x) as u32;
        let ch = &self.channels[k];
        ch.binary_search_by_key(&j, |e| e.0)
            .map(|i| ch[i].1)
            .unwrap_or(0.0)
    }

    pub fn pixel(&self, j: u32) -> Vector2<f64> {
        let j = j as usize;
        Vector2::new((j % self.width) as f64, (j / self.width) as f64)
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let hw = self.width * self.height;
        let mut out = vec![0.0; hw * self.channels.len()];
        for (k, ch) in self.channels.iter().enumerate() {
            for &(j, v) in ch {
                out[k * hw + j as usize] = v;
            }
        }
        out
    }

    /// Most likely pixel of channel `k` and its probability. Ties go to the
    /// smallest linear index.
    pub fn peak(&self, k: usize) -> (Vector2<f64>, f64) {
        let mut best = self.channels[k][0];
        for &e in &self.channels[k][1..] {
            if e.1 > best.1 {
                best = e;
            }
        }
        (self.pixel(best.0), best.1)
    }

    /// The `j` most likely pixels of channel `k`, ordered by probability
    /// (descending) then linear index (ascending). Zero-probability pixels
    /// are never selected.
    pub fn top_j(&self, k: usize, j: usize) -> Vec<(u32, f64)> {
        let mut entries = self.channels[k].clone();
        let cmp = |a: &(u32, f64), b: &(u32, f64)| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0));
        if entries.len() > j {
            entries.select_nth_unstable_by(j, cmp);
            entries.truncate(j);
        }
        entries.sort_by(cmp);
        entries
    }

    /// Weighted mean and covariance of the top-`j` pixels with weights
    /// renormalized to one. The flag reports whether the selected pixels
    /// span the plane (not all collinear).
    pub fn top_j_moments(&self, k: usize, j: usize) -> (Vector2<f64>, Matrix2<f64>, bool) {
        let top = self.top_j(k, j);
        let total: f64 = top.iter().map(|e| e.1).sum();
        let mut mean = Vector2::zeros();
        for &(idx, w) in &top {
            mean += self.pixel(idx) * (w / total);
        }
        let mut cov = Matrix2::zeros();
        for &(idx, w) in &top {
            let d = self.pixel(idx) - mean;
            cov += d * d.transpose() * (w / total);
        }
        let pts: Vec<Vector2<f64>> = top.iter().map(|e| self.pixel(e.0)).collect();
        (mean, cov, spans_plane(&pts))
    }

    /// Reads the `PKHM0001` binary format.
    pub fn read_pkhm(mut r: impl Read) -> Result<Self, ConformalError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != PKHM_MAGIC {
            return Err(ConformalError::InvalidHeatmap("bad magic".into()));
        }
        let k = read_u32(&mut r)? as usize;
        let h = read_u32(&mut r)? as usize;
        let w = read_u32(&mut r)? as usize;
        let hw = check_dims(h, w)?;
        let mut channels = Vec::with_capacity(k);
        let mut buf = vec![0u8; hw * 4];
        for _ in 0..k {
            r.read_exact(&mut buf)?;
            channels.push(
                buf.chunks_exact(4)
                    .enumerate()
                    .map(|(j, b)| (j, f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64))
                    .filter(|(_, v)| *v != 0.0)
                    .collect(),
            );
        }
        Self::from_sparse(w, h, channels)
    }

    pub fn write_pkhm(&self, mut w: impl Write) -> Result<(), ConformalError> {
        w.write_all(PKHM_MAGIC)?;
        for v in [self.channels.len(), self.height, self.width] {
            w.write_all(&(v as u32).to_le_bytes())?;
        }
        for v in self.to_dense() {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
        Ok(())
    }
}

fn check_dims(height: usize, width: usize) -> Result<usize, ConformalError> {
    if height == 0 || width == 0 {
        return Err(ConformalError::InvalidHeatmap("empty image".into()));
    }
    height
        .checked_mul(width)
        .filter(|&hw| hw <= u32::MAX as usize)
        .ok_or_else(|| ConformalError::InvalidHeatmap("image too large".into()))
}

pub(crate) fn read_u32(r: &mut impl Read) -> Result<u32, ConformalError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

/// `true` unless all points lie on one line.
pub(crate) fn spans_plane(pts: &[Vector2<f64>]) -> bool {
    let Some(&p0) = pts.first() else {
        return false;
    };
    let Some(&p1) = pts.iter().find(|p| **p != p0) else {
        return false;
    };
    let dir = p1 - p0;
    pts.iter().any(|p| {
        let d = p - p0;
        (dir.x * d.y - dir.y * d.x).abs() > 1e-9 * dir.norm() * d.norm()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sanitizes_negative_and_nan() {
        let data = [-1.0, 2.0, f64::NAN, 2.0, 0.5, 0.5, 0.0, 0.0];
        let h = Heatmap::from_dense(2, 2, 2, &data).unwrap();
        let d = h.to_dense();
        assert_eq!(&d[..4], &[0.0, 0.5, 0.0, 0.5]);
        assert_eq!(&d[4..], &[0.5, 0.5, 0.0, 0.0]);
        for k in 0..2 {
            let s: f64 = h.entries(k).iter().map(|e| e.1).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        assert!(Heatmap::from_dense(1, 1, 2, &[-1.0, 0.0]).is_err());
    }

    #[test]
    fn peak_ties_prefer_smallest_index() {
        let h = Heatmap::from_dense(1, 2, 3, &[0.1, 0.3, 0.1, 0.3, 0.1, 0.1]).unwrap();
        let (px, p) = h.peak(0);
        assert_eq!(px, Vector2::new(1.0, 0.0));
        assert!((p - 0.3).abs() < 1e-12);
        assert_eq!(h.prob(0, 0, 1), h.prob(0, 1, 0));
    }

    #[test]
    fn top_j_ordering_and_moments() {
        let h = Heatmap::from_dense(1, 2, 2, &[0.1, 0.4, 0.4, 0.1]).unwrap();
        let top = h.top_j(0, 3);
        assert_eq!(top.iter().map(|e| e.0).collect::<Vec<_>>(), vec![1, 2, 0]);
        // pixels (1,0) and (0,1) with equal weight
        let (mean, cov, full) = h.top_j_moments(0, 2);
        assert_eq!(mean, Vector2::new(0.5, 0.5));
        assert!((cov - Matrix2::new(0.25, -0.25, -0.25, 0.25)).abs().max() < 1e-12);
        assert!(!full);
        assert!(h.top_j_moments(0, 3).2);
    }

    #[test]
    fn pkhm_round_trip() {
        let data: Vec<f64> = (0..24).map(|i| (i % 5) as f64).collect();
        let h = Heatmap::from_dense(2, 3, 4, &data).unwrap();
        let mut buf = Vec::new();
        h.write_pkhm(&mut buf).unwrap();
        assert_eq!(&buf[..8], b"PKHM0001");
        assert_eq!(buf.len(), 8 + 12 + 24 * 4);
        let back = Heatmap::read_pkhm(&buf[..]).unwrap();
        for (a, b) in back.to_dense().iter().zip(h.to_dense()) {
            assert!((a - b).abs() < 1e-6);
        }
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(Heatmap::read_pkhm(&bad[..]).is_err());
    }

    proptest::proptest! {
        #[test]
        fn loader_always_yields_valid_channels(
            raw in proptest::collection::vec(-1.0f32..1.0, 12)
        ) {
            let mut buf = b"PKHM0001".to_vec();
            for v in [1u32, 3, 4] {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            for v in &raw {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            match Heatmap::read_pkhm(&buf[..]) {
                Ok(h) => {
                    let d = h.to_dense();
                    proptest::prop_assert!(d.iter().all(|v| *v >= 0.0));
                    let s: f64 = d.iter().sum();
                    proptest::prop_assert!((s - 1.0).abs() < 1e-6);
                }
                Err(_) => proptest::prop_assert!(raw.iter().all(|v| *v <= 0.0)),
            }
        }
    }
}
