//! Flat parameter storage with named views.
//!
//! All of a network's weights and biases live in one contiguous `Vec<f64>`;
//! [`ParamView`]s describe where each tensor sits. Gradients, Adam moments,
//! and checkpoints all share this layout, which keeps update loops and
//! serialization trivially flat.

/// A named window into a [`ParamVector`]: `rows * cols` entries starting at
/// `offset` (row-major; biases use `cols = 1`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamView {
    pub name: String,
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl ParamView {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Flat 64-bit parameter array plus its layout. Views tile the array exactly:
/// view `i + 1` starts where view `i` ends, with no gaps or overlaps.
#[derive(Debug, Clone, Default)]
pub struct ParamVector {
    values: Vec<f64>,
    views: Vec<ParamView>,
}

impl ParamVector {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a zero-initialized `rows x cols` tensor and returns its view
    /// index. Shapes are fixed once pushed.
    pub fn push(&mut self, name: &str, rows: usize, cols: usize) -> usize {
        let offset = self.values.len();
        self.values.resize(offset + rows * cols, 0.0);
        self.views.push(ParamView {
            name: name.to_string(),
            offset,
            rows,
            cols,
        });
        self.views.len() - 1
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn views(&self) -> &[ParamView] {
        &self.views
    }

    pub fn view(&self, index: usize) -> &ParamView {
        &self.views[index]
    }

    pub fn view_by_name(&self, name: &str) -> Option<&ParamView> {
        self.views.iter().find(|v| v.name == name)
    }

    /// Slice of the values covered by view `index`.
    pub fn slice(&self, index: usize) -> &[f64] {
        let v = &self.views[index];
        &self.values[v.offset..v.offset + v.len()]
    }

    pub fn slice_mut(&mut self, index: usize) -> &mut [f64] {
        let v = self.views[index].clone();
        &mut self.values[v.offset..v.offset + v.len()]
    }

    /// Verifies the tiling invariant: views cover `values` contiguously.
    pub fn check_tiling(&self) -> bool {
        let mut next = 0usize;
        for v in &self.views {
            if v.offset != next {
                return false;
            }
            next += v.len();
        }
        next == self.values.len()
    }
}
