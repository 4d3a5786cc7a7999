//! Linear out-of-sample hash function, the feature model Φ, and bit-packed codes.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{Cholesky, DVector, Dyn};

use crate::dataio::{read_u64, DenseMatrix};
use crate::error::{dim_err, Error, Result};

pub const CODE_MAGIC: &[u8; 6] = b"HCOD1\0";
pub const MODEL_MAGIC: &[u8; 6] = b"HMOD1\0";

/// `+1` for strictly positive values, `-1` otherwise (including zero).
#[inline]
pub fn sgn(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else {
        -1.0
    }
}

pub fn sign_matrix(m: &DenseMatrix) -> DenseMatrix {
    m.map(sgn)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Activation {
    #[default]
    Identity,
    Tanh,
}

impl Activation {
    fn to_byte(self) -> u8 {
        match self {
            Activation::Identity => 0,
            Activation::Tanh => 1,
        }
    }

    fn from_byte(b: u8) -> Result<Self> {
        match b {
            0 => Ok(Activation::Identity),
            1 => Ok(Activation::Tanh),
            other => Err(Error::MalformedFile(format!("unknown activation byte {other}"))),
        }
    }
}

impl std::fmt::Display for Activation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Activation::Identity => "identity",
            Activation::Tanh => "tanh",
        })
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(Activation::Identity),
            "tanh" => Ok(Activation::Tanh),
            other => Err(Error::InvalidConfig(format!("unknown activation {other:?}"))),
        }
    }
}

/// Φ(X) = activation(Wᵀ(X − center)).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureModel {
    /// `d × r`.
    pub w: DenseMatrix,
    pub activation: Activation,
    pub center: Option<DVector<f64>>,
}

impl FeatureModel {
    pub fn dims(&self) -> usize {
        self.w.nrows()
    }

    pub fn bits(&self) -> usize {
        self.w.ncols()
    }

    /// Continuous outputs, `r × q`.
    pub fn outputs(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        if x.nrows() != self.dims() {
            return Err(dim_err!("model expects {}-dim features, got {}", self.dims(), x.nrows()));
        }
        let proj = match &self.center {
            Some(c) => {
                let mut xc = x.clone();
                for mut col in xc.column_iter_mut() {
                    col -= c;
                }
                self.w.tr_mul(&xc)
            }
            None => self.w.tr_mul(x),
        };
        Ok(match self.activation {
            Activation::Identity => proj,
            Activation::Tanh => proj.map(f64::tanh),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub ridge_eps: f64,
    pub center: bool,
    pub activation: Activation,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            ridge_eps: 1e-6,
            center: true,
            activation: Activation::Identity,
        }
    }
}

/// Ridge least-squares solver for `W = (X Xᵀ + εI)⁻¹ X Zᵀ` with the Gram
/// factorization cached, so repeated refits against new codes cost `O(d n r)`.
#[derive(Debug, Clone)]
pub struct FeatureFitter {
    xc: DenseMatrix,
    center: Option<DVector<f64>>,
    chol: Cholesky<f64, Dyn>,
    activation: Activation,
}

impl FeatureFitter {
    pub fn new(x: &DenseMatrix, opts: &FitOptions) -> Result<Self> {
        if x.ncols() == 0 {
            return Err(Error::InvalidConfig("cannot fit a hash function on zero samples".into()));
        }
        if !(opts.ridge_eps >= 0.0 && opts.ridge_eps.is_finite()) {
            return Err(Error::InvalidConfig("ridge_eps must be finite and non-negative".into()));
        }
        let (xc, center) = if opts.center {
            let mean = x.column_mean();
            let mut xc = x.clone();
            for mut col in xc.column_iter_mut() {
                col -= &mean;
            }
            (xc, Some(mean))
        } else {
            (x.clone(), None)
        };
        let d = x.nrows();
        let gram = &xc * xc.transpose() + DenseMatrix::identity(d, d) * opts.ridge_eps;
        let chol = Cholesky::new(gram).ok_or_else(|| {
            Error::SingularSystem("feature Gram matrix X Xᵀ + εI is not positive definite".into())
        })?;
        Ok(Self {
            xc,
            center,
            chol,
            activation: opts.activation,
        })
    }

    pub fn fit(&self, z: &DenseMatrix) -> Result<FeatureModel> {
        if z.ncols() != self.xc.ncols() {
            return Err(dim_err!("codes have {} samples, features {}", z.ncols(), self.xc.ncols()));
        }
        let rhs = &self.xc * z.transpose();
        Ok(FeatureModel {
            w: self.chol.solve(&rhs),
            activation: self.activation,
            center: self.center.clone(),
        })
    }
}

/// Out-of-sample linear hash: `W = (X Xᵀ + εI)⁻¹ X Zᵀ` on (optionally) centered X.
pub fn fit_linear_hash(x: &DenseMatrix, z: &DenseMatrix, opts: &FitOptions) -> Result<FeatureModel> {
    FeatureFitter::new(x, opts)?.fit(z)
}

/// Same least-squares fit as [`fit_linear_hash`]; this is the Φ refit run inside
/// the joint optimization loop.
pub fn fit_feature_model(x: &DenseMatrix, z: &DenseMatrix, opts: &FitOptions) -> Result<FeatureModel> {
    fit_linear_hash(x, z, opts)
}

#[derive(Debug, Clone, PartialEq)]
pub struct HashModel {
    pub feature_model: FeatureModel,
}

impl HashModel {
    pub fn new(feature_model: FeatureModel) -> Self {
        Self { feature_model }
    }

    pub fn bits(&self) -> usize {
        self.feature_model.bits()
    }

    pub fn dims(&self) -> usize {
        self.feature_model.dims()
    }

    /// Signs of the projections, `r × q`.
    pub fn signs(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        Ok(sign_matrix(&self.feature_model.outputs(x)?))
    }

    pub fn encode(&self, x: &DenseMatrix) -> Result<PackedCodes> {
        if x.ncols() == 0 {
            if x.nrows() != self.dims() && x.nrows() != 0 {
                return Err(dim_err!("model expects {}-dim features, got {}", self.dims(), x.nrows()));
            }
            return Ok(PackedCodes::empty(self.bits()));
        }
        PackedCodes::pack(&self.signs(x)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        let fm = &self.feature_model;
        w.write_all(MODEL_MAGIC)?;
        w.write_all(&(fm.dims() as u64).to_le_bytes())?;
        w.write_all(&(fm.bits() as u64).to_le_bytes())?;
        w.write_all(&[fm.activation.to_byte(), fm.center.is_some() as u8])?;
        if let Some(c) = &fm.center {
            for v in c.iter() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        for v in fm.w.iter() {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 6];
        r.read_exact(&mut magic)
            .map_err(|_| Error::MalformedFile("truncated model header".into()))?;
        if &magic != MODEL_MAGIC {
            return Err(Error::MalformedFile("bad magic (expected HMOD1)".into()));
        }
        let d = read_u64(&mut r)? as usize;
        let bits = read_u64(&mut r)? as usize;
        let mut flags = [0u8; 2];
        r.read_exact(&mut flags)
            .map_err(|_| Error::MalformedFile("truncated model header".into()))?;
        let activation = Activation::from_byte(flags[0])?;
        let center_present = match flags[1] {
            0 => false,
            1 => true,
            other => return Err(Error::MalformedFile(format!("bad center flag {other}"))),
        };
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        let expected = (d * bits + if center_present { d } else { 0 }) * 8;
        if bytes.len() != expected {
            return Err(Error::MalformedFile(format!(
                "model payload has {} bytes, expected {expected}",
                bytes.len()
            )));
        }
        let mut vals = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")));
        let center = center_present.then(|| DVector::from_iterator(d, vals.by_ref().take(d)));
        let w = DenseMatrix::from_iterator(d, bits, vals);
        if w.iter().chain(center.iter().flat_map(|c| c.iter())).any(|v| !v.is_finite()) {
            return Err(Error::MalformedFile("non-finite model parameter".into()));
        }
        Ok(Self::new(FeatureModel { w, activation, center }))
    }
}

/// Bit-packed ±1 codes: bit set ⇔ +1, `⌈r/64⌉` little-endian words per code,
/// unused high bits zero.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackedCodes {
    n: usize,
    bits: usize,
    words: Vec<u64>,
}

impl PackedCodes {
    pub fn empty(bits: usize) -> Self {
        Self {
            n: 0,
            bits,
            words: Vec::new(),
        }
    }

    pub fn from_words(n: usize, bits: usize, words: Vec<u64>) -> Result<Self> {
        let wpc = bits.div_ceil(64);
        if words.len() != n * wpc {
            return Err(Error::LengthMismatch {
                expected: n * wpc,
                got: words.len(),
            });
        }
        let codes = Self { n, bits, words };
        let mask = codes.last_word_mask();
        if wpc > 0 && (0..n).any(|i| codes.code(i)[wpc - 1] & !mask != 0) {
            return Err(Error::MalformedFile("nonzero padding bits in code words".into()));
        }
        Ok(codes)
    }

    /// Packs an `r × n` matrix of ±1 values.
    pub fn pack(signs: &DenseMatrix) -> Result<Self> {
        let (bits, n) = signs.shape();
        let wpc = bits.div_ceil(64);
        let mut words = vec![0u64; n * wpc];
        for (i, col) in signs.column_iter().enumerate() {
            for (b, &v) in col.iter().enumerate() {
                if v == 1.0 {
                    words[i * wpc + b / 64] |= 1u64 << (b % 64);
                } else if v != -1.0 {
                    return Err(Error::InvalidSign(v));
                }
            }
        }
        Ok(Self { n, bits, words })
    }

    pub fn unpack(&self) -> DenseMatrix {
        DenseMatrix::from_fn(self.bits, self.n, |b, i| {
            if self.code(i)[b / 64] >> (b % 64) & 1 == 1 {
                1.0
            } else {
                -1.0
            }
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn bits(&self) -> usize {
        self.bits
    }

    pub fn words_per_code(&self) -> usize {
        self.bits.div_ceil(64)
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn code(&self, i: usize) -> &[u64] {
        let wpc = self.words_per_code();
        &self.words[i * wpc..(i + 1) * wpc]
    }

    fn last_word_mask(&self) -> u64 {
        match self.bits % 64 {
            0 => u64::MAX,
            rem => (1u64 << rem) - 1,
        }
    }

    /// Codes picked by `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Self {
        let words = indices.iter().flat_map(|&i| self.code(i).iter().copied()).collect();
        Self {
            n: indices.len(),
            bits: self.bits,
            words,
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(CODE_MAGIC)?;
        w.write_all(&(self.n as u64).to_le_bytes())?;
        w.write_all(&(self.bits as u64).to_le_bytes())?;
        for word in &self.words {
            w.write_all(&word.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 6];
        r.read_exact(&mut magic)
            .map_err(|_| Error::MalformedFile("truncated code header".into()))?;
        if &magic != CODE_MAGIC {
            return Err(Error::MalformedFile("bad magic (expected HCOD1)".into()));
        }
        let n = read_u64(&mut r)? as usize;
        let bits = read_u64(&mut r)? as usize;
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        if bytes.len() % 8 != 0 {
            return Err(Error::MalformedFile("code payload not a multiple of 8 bytes".into()));
        }
        let words = bytes
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        Self::from_words(n, bits, words).map_err(|e| match e {
            Error::LengthMismatch { expected, got } => Error::MalformedFile(format!(
                "expected {expected} code words for n = {n}, r = {bits}, found {got}"
            )),
            other => other,
        })
    }
}
