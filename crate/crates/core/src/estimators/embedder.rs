use super::tensor::{read_tensors, take_tensor, write_tensors, Tensor};
use super::{DifferentiableEmbedder, Embedder};
use crate::embedding::{dot, l2_norm, SpeakerEmbedding};
use crate::error::{Error, Result};
use crate::feature_map::FeatureMap;
use crate::rng::DiffusionSeed;

const HEADER: &str = "voxtend-embedder v1";

/// `normalize(W · meanpool(x))` with a fixed `D × M` projection `W`.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyEmbedder {
    projection: Tensor,
}

impl ToyEmbedder {
    pub fn new(projection: Tensor) -> Result<Self> {
        if projection.rows == 0 || projection.cols == 0 || !projection.is_finite() {
            return Err(Error::invalid("projection must be non-empty and finite"));
        }
        Ok(Self { projection })
    }

    /// Identity projection (`D = M`).
    pub fn identity(bins: usize) -> Self {
        let mut w = Tensor::zeros(bins, bins);
        for i in 0..bins {
            w.data[i * bins + i] = 1.0;
        }
        Self { projection: w }
    }

    /// Gaussian projection scaled by `1/sqrt(M)`.
    pub fn random(dim: usize, bins: usize, seed: &mut DiffusionSeed) -> Self {
        let scale = 1.0 / (bins as f64).sqrt();
        let data = (0..dim * bins).map(|_| seed.normal() * scale).collect();
        Self {
            projection: Tensor {
                rows: dim,
                cols: bins,
                data,
            },
        }
    }

    pub fn dim(&self) -> usize {
        self.projection.rows
    }

    pub fn projection(&self) -> &Tensor {
        &self.projection
    }

    fn check_bins(&self, x: &FeatureMap) -> Result<()> {
        if x.bins() != self.projection.cols {
            return Err(Error::ShapeMismatch {
                expected: (x.frames(), self.projection.cols),
                actual: x.shape(),
            });
        }
        Ok(())
    }

    fn project(&self, x: &FeatureMap) -> Result<Vec<f64>> {
        self.check_bins(x)?;
        let pooled = x.mean_pool();
        let mut z = vec![0.0; self.projection.rows];
        self.projection.matvec_acc(&pooled, &mut z);
        Ok(z)
    }

    pub fn to_text(&self) -> String {
        write_tensors(HEADER, [("projection", &self.projection)])
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut tensors = read_tensors(HEADER, text)?;
        let (rows, cols) = tensors
            .first()
            .map(|(_, t)| (t.rows, t.cols))
            .ok_or_else(|| Error::Config("embedder checkpoint has no tensors".into()))?;
        Self::new(take_tensor(&mut tensors, "projection", rows, cols)?)
    }
}

impl Embedder for ToyEmbedder {
    fn input_bins(&self) -> usize {
        self.projection.cols
    }

    fn embed(&self, x: &FeatureMap) -> Result<SpeakerEmbedding> {
        SpeakerEmbedding::normalize(self.project(x)?)
    }
}

impl DifferentiableEmbedder for ToyEmbedder {
    /// Chain rule through normalization, projection and mean pooling:
    /// `d(z/|z| · e)/dz = (e - (u·e) u) / |z|`, then `Wᵀ`, then `1/F` per frame.
    fn similarity_grad(&self, x: &FeatureMap, e: &SpeakerEmbedding) -> Result<FeatureMap> {
        if e.dim() != self.dim() {
            return Err(Error::invalid(format!(
                "embedding dim {} != embedder dim {}",
                e.dim(),
                self.dim()
            )));
        }
        let z = self.project(x)?;
        let norm = l2_norm(&z);
        if norm == 0.0 {
            return Err(Error::DegenerateEmbedding);
        }
        let u: Vec<f64> = z.iter().map(|v| v / norm).collect();
        let cos = dot(&u, e.as_slice());
        let dz: Vec<f64> = u
            .iter()
            .zip(e.as_slice())
            .map(|(ui, ei)| (ei - cos * ui) / norm)
            .collect();
        let mut dpooled = vec![0.0; self.projection.cols];
        self.projection.matvec_t_acc(&dz, &mut dpooled);
        let frames = x.frames();
        let per_frame: Vec<f64> = dpooled.iter().map(|g| g / frames as f64).collect();
        Ok(FeatureMap::from_vec_unchecked(
            frames,
            x.bins(),
            per_frame.repeat(frames),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rand_emb(dim: usize, seed: u64) -> SpeakerEmbedding {
        let mut s = DiffusionSeed::new(seed);
        SpeakerEmbedding::normalize((0..dim).map(|_| s.normal()).collect()).unwrap()
    }

    #[test]
    fn identity_on_constant_rows() {
        let emb = ToyEmbedder::identity(3);
        let x = FeatureMap::from_rows(&[vec![1.0, 2.0, 2.0], vec![1.0, 2.0, 2.0]]).unwrap();
        let e = emb.embed(&x).unwrap();
        let want = [1.0 / 3.0, 2.0 / 3.0, 2.0 / 3.0];
        for (a, b) in e.as_slice().iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
        let x = FeatureMap::from_rows(&[vec![3.0, 4.0]]).unwrap();
        assert_eq!(ToyEmbedder::identity(2).embed(&x).unwrap().as_slice(), &[0.6, 0.8]);
    }

    #[test]
    fn duplication_invariant_and_degenerate() {
        let emb = ToyEmbedder::random(6, 4, &mut DiffusionSeed::new(1));
        let x = DiffusionSeed::new(2).normal_map(5, 4);
        let d = x.concat_frames(&x).unwrap();
        assert_eq!(emb.embed(&x).unwrap(), emb.embed(&d).unwrap());
        assert!(matches!(
            emb.embed(&FeatureMap::zeros(3, 4)),
            Err(Error::DegenerateEmbedding)
        ));
        assert!(emb.embed(&FeatureMap::zeros(3, 5)).is_err());
    }

    #[test]
    fn gradient_matches_central_differences() {
        let h = 1e-5;
        for trial in 0..10 {
            let emb = ToyEmbedder::random(5, 4, &mut DiffusionSeed::new(100 + trial));
            let x = DiffusionSeed::new(200 + trial).normal_map(3, 4).map(|v| v + 0.5);
            let e = rand_emb(5, 300 + trial);
            let grad = emb.similarity_grad(&x, &e).unwrap();
            let f = |m: &FeatureMap| emb.embed(m).unwrap().dot(&e);
            for i in 0..x.len() {
                let mut plus = x.clone();
                plus.as_mut_slice()[i] += h;
                let mut minus = x.clone();
                minus.as_mut_slice()[i] -= h;
                let fd = (f(&plus) - f(&minus)) / (2.0 * h);
                let an = grad.as_slice()[i];
                let rel = (fd - an).abs() / an.abs().max(fd.abs()).max(1e-8);
                assert!(rel < 1e-6, "trial {trial} elem {i}: {an} vs {fd}");
            }
        }
    }

    #[test]
    fn gradient_has_no_radial_component_and_identical_rows() {
        let emb = ToyEmbedder::random(4, 4, &mut DiffusionSeed::new(5));
        let x = DiffusionSeed::new(6).normal_map(6, 4);
        let e = emb.embed(&x).unwrap();
        let grad = emb.similarity_grad(&x, &e).unwrap();
        // Rescaling x rescales the pooled vector; normalization cancels it.
        let radial: f64 = grad.as_slice().iter().zip(x.as_slice()).map(|(g, v)| g * v).sum();
        assert!(radial.abs() < 1e-9);
        for f in 1..grad.frames() {
            for (a, b) in grad.row(f).iter().zip(grad.row(0)) {
                assert!((a - b).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let emb = ToyEmbedder::random(3, 2, &mut DiffusionSeed::new(9));
        assert_eq!(ToyEmbedder::from_text(&emb.to_text()).unwrap(), emb);
    }
}
