use num_complex::Complex64;

/// One frame of complex baseband samples for both receiver polarizations.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DualPolFrame {
    pub x: Vec<Complex64>,
    pub y: Vec<Complex64>,
}

impl DualPolFrame {
    pub fn zeros(len: usize) -> Self {
        Self {
            x: vec![Complex64::default(); len],
            y: vec![Complex64::default(); len],
        }
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    /// Sum of |x|² + |y|² over the frame.
    pub fn energy(&self) -> f64 {
        self.x.iter().chain(&self.y).map(|v| v.norm_sqr()).sum()
    }
}
