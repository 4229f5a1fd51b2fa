/// Welford accumulator for a scalar sample.
#[derive(Clone, Debug, Default)]
pub struct RunningStats {
    count: u64,
    mean: f64,
    m2: f64,
}

impl RunningStats {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Unbiased sample variance; zero with fewer than two samples.
    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            self.m2 / (self.count - 1) as f64
        }
    }

    pub fn std_error(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            (self.variance() / self.count as f64).sqrt()
        }
    }
}

/// Coordinate-wise Welford accumulator.
#[derive(Clone, Debug)]
pub struct VecStats {
    coords: Vec<RunningStats>,
}

impl VecStats {
    pub fn new(dim: usize) -> Self {
        Self {
            coords: vec![RunningStats::new(); dim],
        }
    }

    pub fn push(&mut self, x: &[f64]) {
        debug_assert_eq!(x.len(), self.coords.len());
        for (s, &v) in self.coords.iter_mut().zip(x) {
            s.push(v);
        }
    }

    pub fn mean(&self) -> Vec<f64> {
        self.coords.iter().map(RunningStats::mean).collect()
    }

    pub fn std_error(&self) -> Vec<f64> {
        self.coords.iter().map(RunningStats::std_error).collect()
    }
}
