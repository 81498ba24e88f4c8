//! Tensor-product grids on centered boxes [-Rmax, Rmax]^dim with composite
//! trapezoid weights. Axes are either uniform or sinh-stretched; the stretch
//! concentrates nodes near the origin while still reaching the box edge,
//! which is what heavy-tailed densities need.

#[derive(Debug, Clone)]
pub struct Axis {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Axis {
    pub fn uniform(rmax: f64, n: usize) -> Axis {
        let nodes: Vec<f64> = (0..n)
            .map(|i| -rmax + 2.0 * rmax * (i as f64) / ((n - 1) as f64))
            .collect();
        Axis::with_trapezoid_weights(nodes)
    }

    /// Symmetric sinh-mapped axis: x(t) = Rmax sinh(a t)/sinh(a), t uniform
    /// on [-1,1]. Spacing near 0 is about Rmax * a/sinh(a) * dt.
    pub fn sinh_stretched(rmax: f64, n: usize, stretch: f64) -> Axis {
        let s = stretch.max(1e-6);
        let scale = rmax / s.sinh();
        let nodes: Vec<f64> = (0..n)
            .map(|i| {
                let t = -1.0 + 2.0 * (i as f64) / ((n - 1) as f64);
                scale * (s * t).sinh()
            })
            .collect();
        Axis::with_trapezoid_weights(nodes)
    }

    fn with_trapezoid_weights(nodes: Vec<f64>) -> Axis {
        let n = nodes.len();
        let mut weights = vec![0.0; n];
        for i in 0..n {
            let left = if i > 0 { nodes[i] - nodes[i - 1] } else { 0.0 };
            let right = if i + 1 < n { nodes[i + 1] - nodes[i] } else { 0.0 };
            weights[i] = 0.5 * (left + right);
        }
        Axis { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct Grid {
    pub dim: usize,
    pub axes: Vec<Axis>,
    /// Node coordinates, flattened: node i occupies [i*dim, (i+1)*dim).
    coords: Vec<f64>,
    /// Product quadrature weight per node.
    weights: Vec<f64>,
}

impl Grid {
    pub fn tensor(axes: Vec<Axis>) -> Grid {
        let dim = axes.len();
        let len: usize = axes.iter().map(Axis::len).product();
        let mut coords = Vec::with_capacity(len * dim);
        let mut weights = Vec::with_capacity(len);
        match dim {
            1 => {
                for i in 0..axes[0].len() {
                    coords.push(axes[0].nodes[i]);
                    weights.push(axes[0].weights[i]);
                }
            }
            2 => {
                // Row-major: index = i * ny + j over (x1 index i, x2 index j).
                for i in 0..axes[0].len() {
                    for j in 0..axes[1].len() {
                        coords.push(axes[0].nodes[i]);
                        coords.push(axes[1].nodes[j]);
                        weights.push(axes[0].weights[i] * axes[1].weights[j]);
                    }
                }
            }
            _ => panic!("grids are supported in dimensions 1 and 2"),
        }
        Grid {
            dim,
            axes,
            coords,
            weights,
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    #[inline]
    pub fn node(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    #[inline]
    pub fn weight(&self, i: usize) -> f64 {
        self.weights[i]
    }

    pub fn radius(&self, i: usize) -> f64 {
        self.node(i).iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_boundary(&self, i: usize) -> bool {
        match self.dim {
            1 => i == 0 || i == self.len() - 1,
            2 => {
                let ny = self.axes[1].len();
                let (ix, iy) = (i / ny, i % ny);
                ix == 0 || iy == 0 || ix == self.axes[0].len() - 1 || iy == ny - 1
            }
            _ => unreachable!(),
        }
    }
}

/// Neumaier compensated summation; deterministic for a fixed iteration order.
#[derive(Debug, Clone, Copy, Default)]
pub struct Accumulator {
    sum: f64,
    comp: f64,
}

impl Accumulator {
    pub fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn total(&self) -> f64 {
        self.sum + self.comp
    }
}

pub fn sum_compensated(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut acc = Accumulator::default();
    for v in values {
        acc.add(v);
    }
    acc.total()
}
