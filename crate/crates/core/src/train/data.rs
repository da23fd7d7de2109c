use crate::error::{invalid, shape_err, Result};
use crate::io::{normalize, NormScheme, NormStats};
use crate::seismic::GeneratedSection;
use crate::tensor::{RealGrid, Scalar};

pub const INPUT_SCHEME: NormScheme = NormScheme::MinmaxSym;
pub const TARGET_SCHEME: NormScheme = NormScheme::MaxAbs;

/// Per-patch scaling of a seismic patch into the network's input range.
pub fn prepare_input(grid: &RealGrid<f64>) -> Result<(RealGrid<f64>, NormStats)> {
    normalize(grid, INPUT_SCHEME)
}

/// Per-patch scaling of a reflectivity patch to unit peak magnitude.
pub fn prepare_target(grid: &RealGrid<f64>) -> Result<(RealGrid<f64>, NormStats)> {
    normalize(grid, TARGET_SCHEME)
}

/// Paired `(H, W, 1)` network inputs and targets with their scaling.
#[derive(Debug, Clone, PartialEq)]
pub struct PairSet<T: Scalar> {
    pub inputs: Vec<RealGrid<T>>,
    pub targets: Vec<RealGrid<T>>,
    pub input_stats: Vec<NormStats>,
    pub target_stats: Vec<NormStats>,
}

impl<T: Scalar> PairSet<T> {
    pub fn from_grids(seismic: &[RealGrid<f64>], reflectivity: &[RealGrid<f64>]) -> Result<Self> {
        if seismic.len() != reflectivity.len() {
            return shape_err(format!("{} inputs for {} targets", seismic.len(), reflectivity.len()));
        }
        let mut set = Self {
            inputs: Vec::with_capacity(seismic.len()),
            targets: Vec::with_capacity(seismic.len()),
            input_stats: Vec::new(),
            target_stats: Vec::new(),
        };
        for (s, r) in seismic.iter().zip(reflectivity) {
            if s.dims() != r.dims() || s.rank() != 3 || s.channels() != 1 {
                return shape_err(format!("pair {:?} / {:?} is not two matching (H, W, 1) grids", s.dims(), r.dims()));
            }
            let (x, xs) = prepare_input(s)?;
            let (y, ys) = prepare_target(r)?;
            set.inputs.push(x.cast());
            set.targets.push(y.cast());
            set.input_stats.push(xs);
            set.target_stats.push(ys);
        }
        Ok(set)
    }

    /// Pairs each section's traces with its reflectivity. `level` selects a
    /// noise variant by its position in the dataset's SNR list; `None` takes
    /// the noiseless traces.
    pub fn from_sections(sections: &[GeneratedSection], level: Option<usize>) -> Result<Self> {
        let mut seismic = Vec::with_capacity(sections.len());
        for s in sections {
            seismic.push(match level {
                None => s.clean.grid.clone(),
                Some(i) => match s.noisy.get(i) {
                    Some(t) => t.grid.clone(),
                    None => return invalid(format!("noise level {i} not generated")),
                },
            });
        }
        let refl: Vec<_> = sections.iter().map(|s| s.reflectivity.grid.clone()).collect();
        Self::from_grids(&seismic, &refl)
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn patch_dims(&self) -> Option<&[usize]> {
        self.inputs.first().map(|g| g.dims())
    }

    /// Stacks the selected pairs into `(n, H, W, 1)` grids.
    pub fn batch(&self, indices: &[usize]) -> Result<(RealGrid<T>, RealGrid<T>)> {
        Ok((stack(indices.iter().map(|&i| &self.inputs[i]))?, stack(indices.iter().map(|&i| &self.targets[i]))?))
    }

    /// Median over patches of peak |reflectivity| per unit of input half-range.
    /// Multiplying a normalized prediction by this and by the input patch's
    /// half-range gives reflectivity in physical units.
    pub fn amplitude_ratio(&self) -> f64 {
        let mut r: Vec<f64> = self
            .input_stats
            .iter()
            .zip(&self.target_stats)
            .filter(|(x, y)| !x.degenerate && !y.degenerate)
            .map(|(x, y)| y.b / (0.5 * (x.b - x.a)))
            .collect();
        if r.is_empty() {
            return 1.0;
        }
        r.sort_by(f64::total_cmp);
        r[r.len() / 2]
    }
}

pub fn stack<'a, T: Scalar>(grids: impl IntoIterator<Item = &'a RealGrid<T>>) -> Result<RealGrid<T>> {
    let mut data = Vec::new();
    let mut dims: Option<Vec<usize>> = None;
    let mut n = 0;
    for g in grids {
        match &dims {
            None => dims = Some(g.dims().to_vec()),
            Some(d) if d.as_slice() != g.dims() => return shape_err(format!("cannot stack {:?} with {d:?}", g.dims())),
            _ => {}
        }
        data.extend_from_slice(g.data());
        n += 1;
    }
    let Some(d) = dims else { return invalid("nothing to stack") };
    let mut full = vec![n];
    full.extend(d);
    RealGrid::from_vec(&full, data)
}
