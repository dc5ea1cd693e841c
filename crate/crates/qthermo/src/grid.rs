//! Minimal dense 2D grid used by the thermal solver and image assembly.

/// Row-major `nx * ny` grid of f64 values. `x` is the column index
/// (fast axis), `y` the row index.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub nx: usize,
    pub ny: usize,
    data: Vec<f64>,
}

impl Grid {
    pub fn zeros(nx: usize, ny: usize) -> Self {
        Grid { nx, ny, data: vec![0.0; nx * ny] }
    }

    pub fn from_vec(nx: usize, ny: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), nx * ny);
        Grid { nx, ny, data }
    }

    #[inline]
    pub fn idx(&self, x: usize, y: usize) -> usize {
        debug_assert!(x < self.nx && y < self.ny);
        y * self.nx + x
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[self.idx(x, y)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        let i = self.idx(x, y);
        self.data[i] = v;
    }

    pub fn fill(&mut self, v: f64) {
        self.data.fill(v);
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn max(&self) -> f64 {
        self.data.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Index of the maximum value (first occurrence), as (x, y).
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = (0usize, f64::NEG_INFINITY);
        for (i, &v) in self.data.iter().enumerate() {
            if v > best.1 {
                best = (i, v);
            }
        }
        (best.0 % self.nx, best.0 / self.nx)
    }

    pub fn scaled(&self, factor: f64) -> Grid {
        Grid {
            nx: self.nx,
            ny: self.ny,
            data: self.data.iter().map(|v| v * factor).collect(),
        }
    }

    /// Grid mirrored about the vertical axis (x -> nx-1-x).
    pub fn mirror_x(&self) -> Grid {
        let mut out = Grid::zeros(self.nx, self.ny);
        for y in 0..self.ny {
            for x in 0..self.nx {
                out.set(self.nx - 1 - x, y, self.get(x, y));
            }
        }
        out
    }

    /// Grid mirrored about the horizontal axis (y -> ny-1-y).
    pub fn mirror_y(&self) -> Grid {
        let mut out = Grid::zeros(self.nx, self.ny);
        for y in 0..self.ny {
            for x in 0..self.nx {
                out.set(x, self.ny - 1 - y, self.get(x, y));
            }
        }
        out
    }
}
