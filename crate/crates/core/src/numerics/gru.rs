//! Gated recurrent unit cell.
//!
//! With `[x, h]` the concatenated input and previous state:
//!
//! ```text
//! z  = σ([x, h] W_z + b_z)
//! r  = σ([x, h] W_r + b_r)
//! h̃ = tanh([x, r ⊙ h] W_h + b_h)
//! h' = (1 − z) ⊙ h + z ⊙ h̃
//! ```

use super::params::ParamStore;
use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const GATES: [&str; 3] = ["w_z", "w_r", "w_h"];
pub const BIASES: [&str; 3] = ["b_z", "b_r", "b_h"];

pub fn param_name(prefix: &str, field: &str) -> String {
    if prefix.is_empty() {
        field.to_string()
    } else {
        format!("{prefix}.{field}")
    }
}

/// Registers Glorot-initialized gate weights of shape `(input_dim + hidden) × hidden`
/// and zero biases under `prefix`.
pub fn init_gru(store: &mut ParamStore, prefix: &str, input_dim: usize, hidden: usize) -> Result<()> {
    for g in GATES {
        store.init_glorot(&param_name(prefix, g), input_dim + hidden, hidden)?;
    }
    for b in BIASES {
        store.init_zeros(&param_name(prefix, b), &[hidden])?;
    }
    Ok(())
}

/// Gate parameters bound on a tape.
#[derive(Clone, Copy, Debug)]
pub struct GruVars {
    w: [Var; 3],
    b: [Var; 3],
    pub input_dim: usize,
    pub hidden: usize,
}

impl GruVars {
    pub fn bind(tape: &mut Tape, store: &ParamStore, prefix: &str) -> Result<Self> {
        let wz = store.get(&param_name(prefix, "w_z"))?;
        let (rows, hidden) = wz.dims2();
        if rows < hidden {
            return Err(Error::dim(param_name(prefix, "w_z"), format!(">= {hidden} rows"), rows));
        }
        let mut w = Vec::new();
        for g in GATES {
            let name = param_name(prefix, g);
            let d = store.get(&name)?.dims2();
            if d != (rows, hidden) {
                return Err(Error::dim(name, format!("({rows}, {hidden})"), format!("{d:?}")));
            }
            w.push(tape.param(store, &name)?);
        }
        let mut b = Vec::new();
        for g in BIASES {
            let name = param_name(prefix, g);
            let n = store.get(&name)?.numel();
            if n != hidden {
                return Err(Error::dim(name, hidden, n));
            }
            b.push(tape.param(store, &name)?);
        }
        Ok(Self {
            w: [w[0], w[1], w[2]],
            b: [b[0], b[1], b[2]],
            input_dim: rows - hidden,
            hidden,
        })
    }

    /// One batched step: `x` is `B × input_dim`, `h` is `B × hidden`.
    pub fn step(&self, tape: &mut Tape, x: Var, h: Var) -> Result<Var> {
        let xc = tape.value(x).cols();
        if xc != self.input_dim {
            return Err(Error::dim("gru input x", self.input_dim, xc));
        }
        let hc = tape.value(h).cols();
        if hc != self.hidden {
            return Err(Error::dim("gru state h_prev", self.hidden, hc));
        }
        let xh = tape.concat_cols(&[x, h])?;
        let z = self.gate(tape, xh, 0)?;
        let z = tape.sigmoid(z);
        let r = self.gate(tape, xh, 1)?;
        let r = tape.sigmoid(r);
        let rh = tape.mul(r, h)?;
        let xrh = tape.concat_cols(&[x, rh])?;
        let cand = self.gate(tape, xrh, 2)?;
        let cand = tape.tanh(cand);
        let delta = tape.sub(cand, h)?;
        let upd = tape.mul(z, delta)?;
        tape.add(h, upd)
    }

    fn gate(&self, tape: &mut Tape, input: Var, i: usize) -> Result<Var> {
        let pre = tape.matmul(input, self.w[i])?;
        tape.add_row(pre, self.b[i])
    }
}

/// Single-vector GRU step using the gates stored under the `gru` prefix.
pub fn gru_cell(x: &Tensor, h_prev: &Tensor, params: &ParamStore) -> Result<Tensor> {
    let mut tape = Tape::new();
    let vars = GruVars::bind(&mut tape, params, "gru")?;
    let xv = tape.constant(as_row(x));
    let hv = tape.constant(as_row(h_prev));
    let out = vars.step(&mut tape, xv, hv)?;
    Ok(Tensor::vector(tape.value(out).values().to_vec()))
}

fn as_row(t: &Tensor) -> Tensor {
    Tensor::matrix(1, t.numel(), t.values().to_vec()).expect("row view")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::gradcheck::grad_check;

    fn scalar_params(wz: [f64; 2], wr: [f64; 2], wh: [f64; 2], b: [f64; 3]) -> ParamStore {
        let mut p = ParamStore::new(0);
        p.insert("gru.w_z", Tensor::matrix(2, 1, wz.to_vec()).unwrap()).unwrap();
        p.insert("gru.w_r", Tensor::matrix(2, 1, wr.to_vec()).unwrap()).unwrap();
        p.insert("gru.w_h", Tensor::matrix(2, 1, wh.to_vec()).unwrap()).unwrap();
        p.insert("gru.b_z", Tensor::vector(vec![b[0]])).unwrap();
        p.insert("gru.b_r", Tensor::vector(vec![b[1]])).unwrap();
        p.insert("gru.b_h", Tensor::vector(vec![b[2]])).unwrap();
        p
    }

    #[test]
    fn zero_parameters_keep_zero_state() {
        let mut p = ParamStore::new(1);
        init_gru(&mut p, "gru", 3, 4).unwrap();
        p.zero_all();
        let h = gru_cell(&Tensor::vector(vec![1.0, -2.0, 0.5]), &Tensor::vector(vec![0.0; 4]), &p).unwrap();
        assert_eq!(h.values(), &[0.0; 4]);
    }

    #[test]
    fn scalar_cell_matches_hand_evaluation() {
        // x = 0.5, h = -0.3
        // z = σ(0.4·0.5 − 0.2·(−0.3) + 0.1) = σ(0.36)
        // r = σ(−0.5·0.5 + 0.3·(−0.3) + 0) = σ(−0.34)
        // h̃ = tanh(0.7·0.5 + 0.9·(r·(−0.3)) − 0.05)
        let p = scalar_params([0.4, -0.2], [-0.5, 0.3], [0.7, 0.9], [0.1, 0.0, -0.05]);
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let z = sig(0.36);
        let r = sig(-0.34);
        let cand = (0.35 + 0.9 * (r * -0.3) - 0.05f64).tanh();
        let expected = (1.0 - z) * -0.3 + z * cand;
        let h = gru_cell(&Tensor::vector(vec![0.5]), &Tensor::vector(vec![-0.3]), &p).unwrap();
        assert!((h.values()[0] - expected).abs() < 1e-15, "{} vs {expected}", h.values()[0]);
    }

    #[test]
    fn shape_mismatch_names_tensor() {
        let mut p = ParamStore::new(1);
        init_gru(&mut p, "gru", 3, 4).unwrap();
        let err = gru_cell(&Tensor::vector(vec![1.0, 2.0]), &Tensor::vector(vec![0.0; 4]), &p).unwrap_err();
        assert!(err.to_string().contains("gru input x"), "{err}");
        let err = gru_cell(&Tensor::vector(vec![1.0, 2.0, 3.0]), &Tensor::vector(vec![0.0; 3]), &p).unwrap_err();
        assert!(err.to_string().contains("h_prev"), "{err}");
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut p = ParamStore::new(5);
        init_gru(&mut p, "gru", 3, 4).unwrap();
        for name in BIASES {
            let t = p.get_mut(&param_name("gru", name)).unwrap();
            t.values_mut().iter_mut().enumerate().for_each(|(i, v)| *v = 0.1 * i as f64 - 0.15);
        }
        p.insert("x", Tensor::matrix(2, 3, vec![0.3, -1.2, 0.8, 0.5, 0.1, -0.4]).unwrap()).unwrap();
        p.insert("h0", Tensor::matrix(2, 4, vec![0.2, -0.1, 0.4, 0.0, -0.3, 0.6, 0.1, 0.2]).unwrap()).unwrap();
        let err = grad_check(
            |t, p| {
                let g = GruVars::bind(t, p, "gru")?;
                let x = t.param(p, "x")?;
                let h0 = t.param(p, "h0")?;
                let h1 = g.step(t, x, h0)?;
                let h2 = g.step(t, x, h1)?;
                t.weighted_sum(h2, (0..8).map(|i| (i as f64 * 0.37).sin()).collect())
            },
            &p,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }
}
