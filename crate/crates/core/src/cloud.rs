use crate::error::{Error, Result};
use crate::geom::{SizeParams, Vec3};

pub type Rgb = [f64; 3];

/// Points with per-point size parameters and an optional RGB signal.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    pub positions: Vec<Vec3>,
    pub sizes: Vec<SizeParams>,
    pub colors: Option<Vec<Rgb>>,
}

impl PointCloud {
    pub fn new(positions: Vec<Vec3>, sizes: Vec<SizeParams>) -> Self {
        assert_eq!(positions.len(), sizes.len(), "one size per point");
        Self { positions, sizes, colors: None }
    }

    /// Every point gets the same isotropic size.
    pub fn isotropic(positions: Vec<Vec3>, scale: f64, sigma: f64) -> Self {
        let sizes = vec![SizeParams::Isotropic { scale, sigma }; positions.len()];
        Self::new(positions, sizes)
    }

    pub fn with_colors(mut self, colors: Vec<Rgb>) -> Self {
        assert_eq!(colors.len(), self.positions.len(), "one color per point");
        self.colors = Some(colors);
        self
    }

    pub fn empty() -> Self {
        Self { positions: Vec::new(), sizes: Vec::new(), colors: None }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.sizes.len() != self.positions.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} positions but {} sizes",
                self.positions.len(),
                self.sizes.len()
            )));
        }
        if let Some(c) = &self.colors {
            if c.len() != self.positions.len() {
                return Err(Error::ShapeMismatch(format!("{} positions but {} colors", self.positions.len(), c.len())));
            }
        }
        for (i, s) in self.sizes.iter().enumerate() {
            s.validate().map_err(|e| Error::InvalidInput(format!("point {i}: {e}")))?;
        }
        Ok(())
    }

    /// The sigma every point shares, if all points are isotropic with the
    /// same width.
    pub fn shared_sigma(&self) -> Option<f64> {
        let mut shared = None;
        for s in &self.sizes {
            match *s {
                SizeParams::Isotropic { sigma, .. } => match shared {
                    None => shared = Some(sigma),
                    Some(v) if f64::to_bits(v) == sigma.to_bits() => {}
                    Some(_) => return None,
                },
                SizeParams::FullCov { .. } => return None,
            }
        }
        shared
    }

    /// Sub-cloud of the points whose `keep` flag is set.
    pub fn select(&self, keep: &[bool]) -> PointCloud {
        let pick = |i: &usize| keep[*i];
        let idx: Vec<usize> = (0..self.len()).filter(pick).collect();
        PointCloud {
            positions: idx.iter().map(|&i| self.positions[i]).collect(),
            sizes: idx.iter().map(|&i| self.sizes[i]).collect(),
            colors: self.colors.as_ref().map(|c| idx.iter().map(|&i| c[i]).collect()),
        }
    }
}
