//! Forward pass of the dual-feature fusion attention block on small dense
//! tensors: channel attention from average pooling + sigmoid on both inputs,
//! channel-wise reweighting, concatenation and a 1x1 convolution.

use crate::error::{Error, Result};

/// `H x W x C` tensor, row-major with channels innermost.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Tensor3 {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::InvalidArgument(format!(
                "tensor dimensions must be positive, got {height}x{width}x{channels}"
            )));
        }
        if data.len() != height * width * channels {
            return Err(Error::ShapeMismatch(format!(
                "{height}x{width}x{channels} tensor needs {} values, got {}",
                height * width * channels,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("tensor contains non-finite values".into()));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, v: f64) -> Result<Self> {
        Self::new(height, width, channels, vec![v; height * width * channels])
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, ch: usize) -> f64 {
        self.data[(row * self.width + col) * self.channels + ch]
    }

    fn pixel(&self, idx: usize) -> &[f64] {
        &self.data[idx * self.channels..(idx + 1) * self.channels]
    }
}

/// 1x1 convolution mapping `2 * c_in` concatenated channels to `c_out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv1x1Weights {
    c_in: usize,
    c_out: usize,
    /// Row-major `c_out x (2 * c_in)`.
    matrix: Vec<f64>,
    bias: Option<Vec<f64>>,
}

impl Conv1x1Weights {
    pub fn new(c_in: usize, c_out: usize, matrix: Vec<f64>, bias: Option<Vec<f64>>) -> Result<Self> {
        if c_in == 0 || c_out == 0 {
            return Err(Error::InvalidArgument("channel counts must be positive".into()));
        }
        if matrix.len() != c_out * 2 * c_in {
            return Err(Error::ShapeMismatch(format!(
                "weight matrix needs {} x {} values, got {}",
                c_out,
                2 * c_in,
                matrix.len()
            )));
        }
        if let Some(b) = &bias {
            if b.len() != c_out {
                return Err(Error::ShapeMismatch(format!(
                    "bias needs {c_out} values, got {}",
                    b.len()
                )));
            }
        }
        Ok(Self {
            c_in,
            c_out,
            matrix,
            bias,
        })
    }

    pub fn c_in(&self) -> usize {
        self.c_in
    }

    pub fn c_out(&self) -> usize {
        self.c_out
    }

    #[inline]
    pub fn weight(&self, out: usize, input: usize) -> f64 {
        self.matrix[out * 2 * self.c_in + input]
    }

    pub fn bias(&self) -> Option<&[f64]> {
        self.bias.as_deref()
    }

    /// Same convolution with the two input blocks exchanged.
    pub fn swap_blocks(&self) -> Self {
        let mut matrix = self.matrix.clone();
        for row in matrix.chunks_mut(2 * self.c_in) {
            let (a, b) = row.split_at_mut(self.c_in);
            a.swap_with_slice(b);
        }
        Self {
            matrix,
            ..self.clone()
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Per-channel mean over all spatial positions.
pub fn spatial_avg_pool(f: &Tensor3) -> Vec<f64> {
    let n = f.height * f.width;
    let mut acc = vec![0.0; f.channels];
    for idx in 0..n {
        for (a, v) in acc.iter_mut().zip(f.pixel(idx)) {
            *a += v;
        }
    }
    acc.iter().map(|a| a / n as f64).collect()
}

/// Channel attention weights `sigmoid(avg_pool(f))`, each in `(0, 1)`.
pub fn channel_attention(f: &Tensor3) -> Vec<f64> {
    spatial_avg_pool(f).into_iter().map(sigmoid).collect()
}

/// Fuses the original and denoised feature maps. The concatenation puts the
/// `f2` block first.
pub fn dfa_fuse(f2: &Tensor3, f2_de: &Tensor3, wts: &Conv1x1Weights) -> Result<Tensor3> {
    if f2.shape() != f2_de.shape() {
        return Err(Error::ShapeMismatch(format!(
            "feature maps {:?} vs {:?}",
            f2.shape(),
            f2_de.shape()
        )));
    }
    if wts.c_in != f2.channels {
        return Err(Error::ShapeMismatch(format!(
            "weights expect {} channels per input, tensors have {}",
            wts.c_in, f2.channels
        )));
    }
    let m2 = channel_attention(f2);
    let m2_de = channel_attention(f2_de);
    let c = f2.channels;

    let mut data = Vec::with_capacity(f2.height * f2.width * wts.c_out);
    let mut concat = vec![0.0; 2 * c];
    for idx in 0..f2.height * f2.width {
        for ch in 0..c {
            concat[ch] = m2[ch] * f2.pixel(idx)[ch];
            concat[c + ch] = m2_de[ch] * f2_de.pixel(idx)[ch];
        }
        for o in 0..wts.c_out {
            let row = &wts.matrix[o * 2 * c..(o + 1) * 2 * c];
            let mut acc = wts.bias.as_ref().map_or(0.0, |b| b[o]);
            for (w, x) in row.iter().zip(&concat) {
                acc += w * x;
            }
            data.push(acc);
        }
    }
    Tensor3::new(f2.height, f2.width, wts.c_out, data)
}
