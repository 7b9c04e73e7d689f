use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"MLP1";

/// A named contiguous slice of the output layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Head {
    pub name: String,
    pub start: usize,
    pub len: usize,
}

/// Fully connected network with tanh hidden layers and a linear output.
///
/// Parameters live in one flat vector, layer by layer, each layer stored as
/// its weight matrix (`n_out x n_in`, row-major) followed by its bias.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    params: Vec<f64>,
    heads: Vec<Head>,
}

/// Activations recorded by [`Mlp::forward_cached`]: the input, every hidden
/// layer after tanh, and the output.
#[derive(Debug, Clone)]
pub struct Cache {
    acts: Vec<Vec<f64>>,
}

impl Cache {
    pub fn output(&self) -> &[f64] {
        self.acts.last().expect("cache holds at least the input")
    }
}

pub fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| (w[0] + 1) * w[1]).sum()
}

impl Mlp {
    /// All-zero network.
    pub fn zeros(sizes: &[usize]) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::Config(format!("invalid layer sizes {sizes:?}")));
        }
        let n_out = *sizes.last().unwrap();
        Ok(Self {
            sizes: sizes.to_vec(),
            params: vec![0.0; param_count(sizes)],
            heads: vec![Head {
                name: "out".into(),
                start: 0,
                len: n_out,
            }],
        })
    }

    /// Weights uniform in `±sqrt(6 / (n_in + n_out))`, biases zero.
    pub fn new(sizes: &[usize], seed: u64) -> Result<Self> {
        let mut net = Self::zeros(sizes)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut off = 0;
        for w in sizes.windows(2) {
            let (n_in, n_out) = (w[0], w[1]);
            let a = (6.0 / (n_in + n_out) as f64).sqrt();
            for p in &mut net.params[off..off + n_in * n_out] {
                *p = rng.random_range(-a..a);
            }
            off += (n_in + 1) * n_out;
        }
        Ok(net)
    }

    /// Splits the output into named heads; lengths must cover it exactly.
    pub fn with_heads(mut self, heads: &[(&str, usize)]) -> Result<Self> {
        let total: usize = heads.iter().map(|h| h.1).sum();
        if total != self.output_len() {
            return Err(Error::Config(format!(
                "heads cover {total} outputs, network has {}",
                self.output_len()
            )));
        }
        let mut start = 0;
        self.heads = heads
            .iter()
            .map(|(name, len)| {
                let h = Head {
                    name: name.to_string(),
                    start,
                    len: *len,
                };
                start += len;
                h
            })
            .collect();
        Ok(self)
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn heads(&self) -> &[Head] {
        &self.heads
    }

    pub fn head(&self, name: &str) -> Option<&Head> {
        self.heads.iter().find(|h| h.name == name)
    }

    pub fn input_len(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_len(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_len() {
            return Err(Error::Input(format!(
                "network expects {} inputs, got {}",
                self.input_len(),
                x.len()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut a = x.to_vec();
        let mut off = 0;
        let last = self.sizes.len() - 2;
        for (l, w) in self.sizes.windows(2).enumerate() {
            a = self.layer(off, w[0], w[1], &a, l < last);
            off += (w[0] + 1) * w[1];
        }
        Ok(a)
    }

    pub fn forward_cached(&self, x: &[f64]) -> Result<Cache> {
        self.check_input(x)?;
        let mut acts = Vec::with_capacity(self.sizes.len());
        acts.push(x.to_vec());
        let mut off = 0;
        let last = self.sizes.len() - 2;
        for (l, w) in self.sizes.windows(2).enumerate() {
            let next = self.layer(off, w[0], w[1], &acts[l], l < last);
            acts.push(next);
            off += (w[0] + 1) * w[1];
        }
        Ok(Cache { acts })
    }

    fn layer(&self, off: usize, n_in: usize, n_out: usize, a: &[f64], hidden: bool) -> Vec<f64> {
        let w = &self.params[off..off + n_in * n_out];
        let b = &self.params[off + n_in * n_out..off + (n_in + 1) * n_out];
        (0..n_out)
            .map(|o| {
                let z = b[o] + dot(&w[o * n_in..(o + 1) * n_in], a);
                if hidden {
                    z.tanh()
                } else {
                    z
                }
            })
            .collect()
    }

    /// Adds the parameter gradient of `d_out · output` to `grads` and
    /// returns the gradient with respect to the input.
    pub fn backward(&self, cache: &Cache, d_out: &[f64], grads: &mut [f64]) -> Vec<f64> {
        assert_eq!(d_out.len(), self.output_len(), "output gradient length");
        assert_eq!(grads.len(), self.params.len(), "gradient buffer length");
        let mut delta = d_out.to_vec();
        let mut off = self.params.len();
        for l in (0..self.sizes.len() - 1).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            off -= (n_in + 1) * n_out;
            let a = &cache.acts[l];
            let (gw, gb) = grads[off..off + (n_in + 1) * n_out].split_at_mut(n_in * n_out);
            for o in 0..n_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                gb[o] += d;
                for (g, ai) in gw[o * n_in..(o + 1) * n_in].iter_mut().zip(a) {
                    *g += d * ai;
                }
            }
            let w = &self.params[off..off + n_in * n_out];
            let mut prev = vec![0.0; n_in];
            for o in 0..n_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                for (p, wi) in prev.iter_mut().zip(&w[o * n_in..(o + 1) * n_in]) {
                    *p += d * wi;
                }
            }
            if l > 0 {
                for (p, ai) in prev.iter_mut().zip(a) {
                    *p *= 1.0 - ai * ai;
                }
            }
            delta = prev;
        }
        delta
    }

    /// `MLP1` checkpoint: magic, u32 layer count, u32 sizes, f64 parameters,
    /// all little-endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + 4 * self.sizes.len() + 8 * self.params.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.sizes.len() as u32).to_le_bytes());
        for s in &self.sizes {
            out.extend_from_slice(&(*s as u32).to_le_bytes());
        }
        for p in &self.params {
            out.extend_from_slice(&p.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: String| Error::Format(format!("MLP checkpoint: {m}"));
        if bytes.len() < 8 || &bytes[..4] != MAGIC {
            return Err(bad("missing MLP1 magic".into()));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
        let n_layers = u32_at(4);
        let header = 8 + 4 * n_layers;
        if bytes.len() < header {
            return Err(bad("truncated layer sizes".into()));
        }
        let sizes: Vec<usize> = (0..n_layers).map(|i| u32_at(8 + 4 * i)).collect();
        let mut net = Self::zeros(&sizes)?;
        let expected = header + 8 * net.params.len();
        if bytes.len() != expected {
            return Err(bad(format!("expected {expected} bytes, found {}", bytes.len())));
        }
        for (p, b) in net.params.iter_mut().zip(bytes[header..].chunks_exact(8)) {
            *p = f64::from_le_bytes(b.try_into().unwrap());
        }
        if net.params.iter().any(|p| !p.is_finite()) {
            return Err(bad("non-finite parameter".into()));
        }
        Ok(net)
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
