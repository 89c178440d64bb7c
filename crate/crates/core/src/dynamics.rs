use nalgebra::DMatrix;

/// Horizon dynamics affine in the decisions:
/// `y_j = c_j + Σ_m B[j,m]·u_m + Σ_{i<j} A[j,i]·y_i` for `j = 0..steps`,
/// where `y_j` is the output one step after decision `u_j`.
#[derive(Clone, Debug, PartialEq)]
pub struct AffineDynamics {
    pub constant: Vec<f64>,
    pub input: DMatrix<f64>,
    /// Strictly lower triangular.
    pub recursion: DMatrix<f64>,
}

impl AffineDynamics {
    pub fn zeros(steps: usize) -> Self {
        Self {
            constant: vec![0.0; steps],
            input: DMatrix::zeros(steps, steps),
            recursion: DMatrix::zeros(steps, steps),
        }
    }

    pub fn steps(&self) -> usize {
        self.constant.len()
    }

    /// Forward substitution for a given decision sequence.
    pub fn simulate(&self, u: &[f64]) -> Vec<f64> {
        let n = self.steps();
        let mut y = vec![0.0; n];
        for j in 0..n {
            let mut v = self.constant[j];
            for (m, um) in u.iter().enumerate().take(n) {
                v += self.input[(j, m)] * um;
            }
            for i in 0..j {
                v += self.recursion[(j, i)] * y[i];
            }
            y[j] = v;
        }
        y
    }

    /// Eliminates the recursion: `y = c̃ + G·u`.
    pub fn explicit(&self) -> (Vec<f64>, DMatrix<f64>) {
        let n = self.steps();
        let mut c = vec![0.0; n];
        let mut g = DMatrix::zeros(n, n);
        for j in 0..n {
            c[j] = self.constant[j];
            for m in 0..n {
                g[(j, m)] = self.input[(j, m)];
            }
            for i in 0..j {
                let a = self.recursion[(j, i)];
                if a != 0.0 {
                    c[j] += a * c[i];
                    for m in 0..n {
                        g[(j, m)] += a * g[(i, m)];
                    }
                }
            }
        }
        (c, g)
    }
}
