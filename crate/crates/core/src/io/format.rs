use std::fmt;
use std::path::Path;

use crate::numerics::{Matrix, Real};
use crate::quantiser::Quantiser;
use crate::sequence::{Domain, FeatureSequence, TokenSequence, MAX_CODEBOOK_SIZE};
use crate::ssl::{StudentModel, StudentShape};
use crate::{Error, Result};

pub const FEATURE_MAGIC: &[u8; 4] = b"MVQF";
pub const QUANTISER_MAGIC: &[u8; 4] = b"MVQQ";
pub const TOKEN_MAGIC: &[u8; 4] = b"MVQT";
pub const STUDENT_MAGIC: &[u8; 4] = b"MVQS";
pub const FORMAT_VERSION: u32 = 1;

pub const FEATURE_HEADER_LEN: usize = 21;
pub const QUANTISER_HEADER_LEN: usize = 24;
pub const TOKEN_HEADER_LEN: usize = 20;
pub const STUDENT_HEADER_LEN: usize = 44;

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    /// Checks magic and version and positions the cursor after them.
    fn open(bytes: &'a [u8], magic: &[u8; 4], header_len: usize) -> Result<Self> {
        if bytes.len() < 4 || &bytes[..4] != magic {
            return Err(Error::BadMagic {
                expected: String::from_utf8_lossy(magic).into_owned(),
                found: bytes[..bytes.len().min(4)].to_vec(),
            });
        }
        if bytes.len() < header_len {
            return Err(Error::SizeMismatch {
                expected: header_len as u64,
                actual: bytes.len() as u64,
            });
        }
        let mut c = Cursor { bytes, pos: 4 };
        let version = c.u32();
        if version != FORMAT_VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        Ok(c)
    }

    fn take<const N: usize>(&mut self) -> [u8; N] {
        let out = self.bytes[self.pos..self.pos + N]
            .try_into()
            .expect("length checked");
        self.pos += N;
        out
    }

    fn u8(&mut self) -> u8 {
        self.take::<1>()[0]
    }

    fn u16(&mut self) -> u16 {
        u16::from_le_bytes(self.take())
    }

    fn u32(&mut self) -> u32 {
        u32::from_le_bytes(self.take())
    }

    fn f32(&mut self) -> f32 {
        f32::from_le_bytes(self.take())
    }

    fn f64(&mut self) -> f64 {
        f64::from_le_bytes(self.take())
    }

    /// Fails unless exactly `payload` bytes follow the header.
    fn expect_payload(&self, payload: u64) -> Result<()> {
        let expected = self.pos as u64 + payload;
        if self.bytes.len() as u64 != expected {
            return Err(Error::SizeMismatch {
                expected,
                actual: self.bytes.len() as u64,
            });
        }
        Ok(())
    }

    fn f32_matrix<T: Real>(&mut self, rows: usize, cols: usize) -> Result<Matrix<T>> {
        let data = (0..rows * cols)
            .map(|_| T::lit(f64::from(self.f32())))
            .collect();
        Matrix::from_vec(rows, cols, data)
            .map_err(|_| Error::Malformed("non-finite value in payload".into()))
    }

    fn f64_matrix<T: Real>(&mut self, rows: usize, cols: usize) -> Result<Matrix<T>> {
        let data = (0..rows * cols).map(|_| T::lit(self.f64())).collect();
        Matrix::from_vec(rows, cols, data)
            .map_err(|_| Error::Malformed("non-finite value in payload".into()))
    }
}

fn header(magic: &[u8; 4], capacity: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(capacity);
    out.extend_from_slice(magic);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out
}

fn put_u32(out: &mut Vec<u8>, v: usize, what: &str) -> Result<()> {
    let v = u32::try_from(v)
        .map_err(|_| Error::InvalidInput(format!("{what} {v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_f32s<T: Real>(out: &mut Vec<u8>, xs: &[T]) {
    for x in xs {
        out.extend_from_slice(&(x.as_f64() as f32).to_le_bytes());
    }
}

fn product(dims: &[u32], width: u64) -> Result<u64> {
    dims.iter()
        .try_fold(width, |acc, &d| acc.checked_mul(u64::from(d)))
        .ok_or_else(|| Error::Malformed("declared sizes overflow".into()))
}

/// Feature file: `MVQF`, version, `T`, `d`, frame rate (f32), domain tag
/// (u8), then `T·d` f32 values row by row.
pub fn encode_features<T: Real>(xs: &FeatureSequence<T>) -> Result<Vec<u8>> {
    let mut out = header(FEATURE_MAGIC, FEATURE_HEADER_LEN + 4 * xs.len() * xs.dim());
    put_u32(&mut out, xs.len(), "frame count")?;
    put_u32(&mut out, xs.dim(), "dimension")?;
    out.extend_from_slice(&(xs.frame_rate_hz() as f32).to_le_bytes());
    out.push(xs.domain().tag());
    put_f32s(&mut out, xs.frames().as_slice());
    Ok(out)
}

pub fn decode_features<T: Real>(bytes: &[u8]) -> Result<FeatureSequence<T>> {
    let mut c = Cursor::open(bytes, FEATURE_MAGIC, FEATURE_HEADER_LEN)?;
    let (t, d) = (c.u32(), c.u32());
    let rate = c.f32();
    let tag = c.u8();
    let domain = Domain::from_tag(tag)
        .ok_or_else(|| Error::Malformed(format!("unknown domain tag {tag}")))?;
    if !(rate > 0.0 && rate.is_finite()) {
        return Err(Error::Malformed(format!(
            "frame rate {rate} is not positive"
        )));
    }
    if d == 0 {
        return Err(Error::Malformed("feature dimension 0".into()));
    }
    c.expect_payload(product(&[t, d], 4)?)?;
    let frames = c.f32_matrix(t as usize, d as usize)?;
    FeatureSequence::new(frames, f64::from(rate), domain)
}

/// Quantiser file: `MVQQ`, version, `N`, `K`, `d`, `R`, then codebooks,
/// classifier weights (both `N·K·d`) and biases (`N·K`) as f32.
pub fn encode_quantiser<T: Real>(q: &Quantiser<T>) -> Result<Vec<u8>> {
    let (n, k, d) = (q.n_codebooks(), q.codebook_size(), q.dim());
    let mut out = header(
        QUANTISER_MAGIC,
        QUANTISER_HEADER_LEN + 4 * n * k * (2 * d + 1),
    );
    for (v, what) in [(n, "N"), (k, "K"), (d, "d"), (q.refine_steps(), "R")] {
        put_u32(&mut out, v, what)?;
    }
    for p in q.parameters() {
        put_f32s(&mut out, p.as_slice());
    }
    Ok(out)
}

pub fn decode_quantiser<T: Real>(bytes: &[u8]) -> Result<Quantiser<T>> {
    let mut c = Cursor::open(bytes, QUANTISER_MAGIC, QUANTISER_HEADER_LEN)?;
    let (n, k, d, r) = (c.u32(), c.u32(), c.u32(), c.u32());
    if n == 0 || k == 0 || d == 0 || k as usize > MAX_CODEBOOK_SIZE {
        return Err(Error::Malformed(format!(
            "invalid quantiser sizes N={n} K={k} d={d}"
        )));
    }
    let per_codebook = product(&[k], 4)?
        .checked_mul(2 * u64::from(d) + 1)
        .ok_or_else(|| Error::Malformed("declared sizes overflow".into()))?;
    c.expect_payload(
        per_codebook
            .checked_mul(u64::from(n))
            .ok_or_else(|| Error::Malformed("declared sizes overflow".into()))?,
    )?;
    let (n, k, d) = (n as usize, k as usize, d as usize);
    let codebooks = (0..n).map(|_| c.f32_matrix(k, d)).collect::<Result<_>>()?;
    let weights = (0..n).map(|_| c.f32_matrix(k, d)).collect::<Result<_>>()?;
    let biases = (0..n).map(|_| c.f32_matrix(1, k)).collect::<Result<_>>()?;
    Quantiser::from_parts(codebooks, weights, biases, r as usize)
}

fn token_width(k: usize) -> usize {
    if k <= 256 {
        1
    } else {
        2
    }
}

/// Token file: `MVQT`, version, `T`, `N`, `K`, then `T·N` tokens frame by
/// frame, one byte each when `K ≤ 256` and u16 otherwise.
pub fn encode_tokens(z: &TokenSequence) -> Result<Vec<u8>> {
    let width = token_width(z.codebook_size());
    let mut out = header(TOKEN_MAGIC, TOKEN_HEADER_LEN + width * z.as_flat().len());
    put_u32(&mut out, z.len(), "frame count")?;
    put_u32(&mut out, z.n_codebooks(), "N")?;
    put_u32(&mut out, z.codebook_size(), "K")?;
    for &tok in z.as_flat() {
        if width == 1 {
            out.push(tok as u8);
        } else {
            out.extend_from_slice(&tok.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_tokens(bytes: &[u8]) -> Result<TokenSequence> {
    let mut c = Cursor::open(bytes, TOKEN_MAGIC, TOKEN_HEADER_LEN)?;
    let (t, n, k) = (c.u32(), c.u32(), c.u32());
    if n == 0 || k == 0 || k as usize > MAX_CODEBOOK_SIZE {
        return Err(Error::Malformed(format!("invalid token sizes N={n} K={k}")));
    }
    let width = token_width(k as usize);
    c.expect_payload(product(&[t, n], width as u64)?)?;
    let tokens: Vec<u16> = (0..t as usize * n as usize)
        .map(|_| {
            if width == 1 {
                u16::from(c.u8())
            } else {
                c.u16()
            }
        })
        .collect();
    if let Some(&bad) = tokens.iter().find(|&&tok| u32::from(tok) >= k) {
        return Err(Error::Malformed(format!(
            "token {bad} out of range for K={k}"
        )));
    }
    TokenSequence::from_flat(n as usize, k as usize, tokens)
}

/// Student file: `MVQS`, version, `d_in`, `d_model`, layers, window, speech
/// `N`, `K`, an audio-heads flag and audio `N`, `K` (zero when absent), then
/// every parameter tensor as f64.
pub fn encode_student<T: Real>(model: &StudentModel<T>) -> Result<Vec<u8>> {
    let s = model.shape();
    let mut out = header(
        STUDENT_MAGIC,
        STUDENT_HEADER_LEN + 8 * model.parameter_count(),
    );
    let (na, ka) = s.audio_heads.unwrap_or((0, 0));
    for v in [
        s.d_in,
        s.d_model,
        s.layers,
        s.window,
        s.speech_heads.0,
        s.speech_heads.1,
        usize::from(s.audio_heads.is_some()),
        na,
        ka,
    ] {
        put_u32(&mut out, v, "student size")?;
    }
    for p in model.parameters() {
        for x in p.as_slice() {
            out.extend_from_slice(&x.as_f64().to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_student<T: Real>(bytes: &[u8]) -> Result<StudentModel<T>> {
    let mut c = Cursor::open(bytes, STUDENT_MAGIC, STUDENT_HEADER_LEN)?;
    let v: Vec<usize> = (0..9).map(|_| c.u32() as usize).collect();
    let shape = StudentShape {
        d_in: v[0],
        d_model: v[1],
        layers: v[2],
        window: v[3],
        speech_heads: (v[4], v[5]),
        audio_heads: match v[6] {
            0 => None,
            1 => Some((v[7], v[8])),
            f => return Err(Error::Malformed(format!("audio-heads flag {f}"))),
        },
    };
    shape
        .validate()
        .map_err(|e| Error::Malformed(format!("invalid student shape: {e}")))?;
    let count = student_parameter_count(&shape)
        .ok_or_else(|| Error::Malformed("declared sizes overflow".into()))?;
    c.expect_payload(
        count
            .checked_mul(8)
            .ok_or_else(|| Error::Malformed("declared sizes overflow".into()))?,
    )?;
    let mut model = StudentModel::zeros(shape)?;
    for p in model.parameters_mut() {
        let (rows, cols) = p.shape();
        *p = c.f64_matrix(rows, cols)?;
    }
    Ok(model)
}

fn student_parameter_count(s: &StudentShape) -> Option<u64> {
    let (d_in, dm) = (s.d_in as u64, s.d_model as u64);
    let block = (s.window as u64)
        .checked_mul(dm)?
        .checked_mul(dm)?
        .checked_add(dm)?;
    let heads = |(n, k): (usize, usize)| (n as u64).checked_mul(k as u64)?.checked_mul(dm);
    d_in.checked_add(dm.checked_mul(d_in)?)?
        .checked_add(dm)?
        .checked_add(block.checked_mul(s.layers as u64)?)?
        .checked_add(heads(s.speech_heads)?)?
        .checked_add(s.audio_heads.map_or(Some(0), heads)?)
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_features<T: Real>(path: impl AsRef<Path>) -> Result<FeatureSequence<T>> {
    decode_features(&read(path.as_ref())?)
}

pub fn write_features<T: Real>(path: impl AsRef<Path>, xs: &FeatureSequence<T>) -> Result<()> {
    write(path.as_ref(), &encode_features(xs)?)
}

pub fn read_quantiser<T: Real>(path: impl AsRef<Path>) -> Result<Quantiser<T>> {
    decode_quantiser(&read(path.as_ref())?)
}

pub fn write_quantiser<T: Real>(path: impl AsRef<Path>, q: &Quantiser<T>) -> Result<()> {
    write(path.as_ref(), &encode_quantiser(q)?)
}

pub fn read_tokens(path: impl AsRef<Path>) -> Result<TokenSequence> {
    decode_tokens(&read(path.as_ref())?)
}

pub fn write_tokens(path: impl AsRef<Path>, z: &TokenSequence) -> Result<()> {
    write(path.as_ref(), &encode_tokens(z)?)
}

pub fn read_student<T: Real>(path: impl AsRef<Path>) -> Result<StudentModel<T>> {
    decode_student(&read(path.as_ref())?)
}

pub fn write_student<T: Real>(path: impl AsRef<Path>, model: &StudentModel<T>) -> Result<()> {
    write(path.as_ref(), &encode_student(model)?)
}

/// Header fields of any of the binary formats.
#[derive(Debug, Clone, PartialEq)]
pub enum FileSummary {
    Features {
        frames: u32,
        dim: u32,
        frame_rate_hz: f32,
        domain: Domain,
    },
    Quantiser {
        n_codebooks: u32,
        codebook_size: u32,
        dim: u32,
        refine_steps: u32,
    },
    Tokens {
        frames: u32,
        n_codebooks: u32,
        codebook_size: u32,
        token_bytes: u32,
    },
    Student {
        shape: StudentShape,
        parameters: u64,
    },
}

impl fmt::Display for FileSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FileSummary::Features {
                frames,
                dim,
                frame_rate_hz,
                domain,
            } => {
                writeln!(f, "format=MVQF")?;
                writeln!(f, "version={FORMAT_VERSION}")?;
                writeln!(f, "T={frames}")?;
                writeln!(f, "d={dim}")?;
                writeln!(f, "frame_rate_hz={frame_rate_hz}")?;
                write!(f, "domain={}", domain.name())
            }
            FileSummary::Quantiser {
                n_codebooks,
                codebook_size,
                dim,
                refine_steps,
            } => {
                writeln!(f, "format=MVQQ")?;
                writeln!(f, "version={FORMAT_VERSION}")?;
                writeln!(f, "N={n_codebooks}")?;
                writeln!(f, "K={codebook_size}")?;
                writeln!(f, "d={dim}")?;
                write!(f, "R={refine_steps}")
            }
            FileSummary::Tokens {
                frames,
                n_codebooks,
                codebook_size,
                token_bytes,
            } => {
                writeln!(f, "format=MVQT")?;
                writeln!(f, "version={FORMAT_VERSION}")?;
                writeln!(f, "T={frames}")?;
                writeln!(f, "N={n_codebooks}")?;
                writeln!(f, "K={codebook_size}")?;
                write!(f, "token_bytes={token_bytes}")
            }
            FileSummary::Student { shape, parameters } => {
                writeln!(f, "format=MVQS")?;
                writeln!(f, "version={FORMAT_VERSION}")?;
                writeln!(f, "d_in={}", shape.d_in)?;
                writeln!(f, "d_model={}", shape.d_model)?;
                writeln!(f, "layers={}", shape.layers)?;
                writeln!(f, "window={}", shape.window)?;
                writeln!(
                    f,
                    "speech_heads={}x{}",
                    shape.speech_heads.0, shape.speech_heads.1
                )?;
                match shape.audio_heads {
                    Some((n, k)) => writeln!(f, "audio_heads={n}x{k}")?,
                    None => writeln!(f, "audio_heads=none")?,
                }
                write!(f, "parameters={parameters}")
            }
        }
    }
}

/// Fully validates `bytes` as whichever format its magic names and returns
/// the header fields.
pub fn inspect_bytes(bytes: &[u8]) -> Result<FileSummary> {
    match bytes.get(..4) {
        Some(m) if m == FEATURE_MAGIC => {
            let xs = decode_features::<f32>(bytes)?;
            Ok(FileSummary::Features {
                frames: xs.len() as u32,
                dim: xs.dim() as u32,
                frame_rate_hz: xs.frame_rate_hz() as f32,
                domain: xs.domain(),
            })
        }
        Some(m) if m == QUANTISER_MAGIC => {
            let q = decode_quantiser::<f32>(bytes)?;
            Ok(FileSummary::Quantiser {
                n_codebooks: q.n_codebooks() as u32,
                codebook_size: q.codebook_size() as u32,
                dim: q.dim() as u32,
                refine_steps: q.refine_steps() as u32,
            })
        }
        Some(m) if m == TOKEN_MAGIC => {
            let z = decode_tokens(bytes)?;
            Ok(FileSummary::Tokens {
                frames: z.len() as u32,
                n_codebooks: z.n_codebooks() as u32,
                codebook_size: z.codebook_size() as u32,
                token_bytes: token_width(z.codebook_size()) as u32,
            })
        }
        Some(m) if m == STUDENT_MAGIC => {
            let model = decode_student::<f64>(bytes)?;
            Ok(FileSummary::Student {
                shape: model.shape(),
                parameters: model.parameter_count() as u64,
            })
        }
        _ => Err(Error::BadMagic {
            expected: "MVQF, MVQQ, MVQT or MVQS".into(),
            found: bytes[..bytes.len().min(4)].to_vec(),
        }),
    }
}
