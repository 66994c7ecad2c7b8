use crate::numerics::{streams, Matrix, Real, Rng};
use crate::{Error, Result};

/// Sizes of a [`StudentModel`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StudentShape {
    pub d_in: usize,
    pub d_model: usize,
    pub layers: usize,
    /// Temporal convolution window, odd.
    pub window: usize,
    /// `(N, K)` of the speech-target heads.
    pub speech_heads: (usize, usize),
    /// `(N, K)` of the audio-target heads, when training dual-domain.
    pub audio_heads: Option<(usize, usize)>,
}

impl StudentShape {
    pub fn validate(&self) -> Result<()> {
        let ok = self.d_in > 0
            && self.d_model > 0
            && self.window % 2 == 1
            && self.speech_heads.0 > 0
            && self.speech_heads.1 >= 2
            && self.audio_heads.is_none_or(|(n, k)| n > 0 && k >= 2);
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid student shape {self:?}")))
        }
    }

    /// Frames on each side that can influence an output frame.
    pub fn receptive_radius(&self) -> usize {
        self.layers * (self.window - 1) / 2
    }
}

/// One `conv → tanh → residual` block: `h + tanh(b + Σ_j W_j h[t + j − r])`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvBlock<T> {
    /// `window` matrices of `d_model × d_model`, tap `j` reads frame `t + j − r`.
    pub taps: Vec<Matrix<T>>,
    pub bias: Matrix<T>,
}

/// Toy contextual student encoder with per-codebook prediction heads.
#[derive(Debug, Clone, PartialEq)]
pub struct StudentModel<T> {
    pub mask_embedding: Matrix<T>,
    pub input_proj: Matrix<T>,
    pub input_bias: Matrix<T>,
    pub blocks: Vec<ConvBlock<T>>,
    pub heads_speech: Vec<Matrix<T>>,
    pub heads_audio: Vec<Matrix<T>>,
    window: usize,
}

impl<T: Real> StudentModel<T> {
    pub fn zeros(shape: StudentShape) -> Result<Self> {
        shape.validate()?;
        let dm = shape.d_model;
        let (ns, ks) = shape.speech_heads;
        let (na, ka) = shape.audio_heads.unwrap_or((0, 2));
        Ok(Self {
            mask_embedding: Matrix::zeros(1, shape.d_in),
            input_proj: Matrix::zeros(dm, shape.d_in),
            input_bias: Matrix::zeros(1, dm),
            blocks: (0..shape.layers)
                .map(|_| ConvBlock {
                    taps: vec![Matrix::zeros(dm, dm); shape.window],
                    bias: Matrix::zeros(1, dm),
                })
                .collect(),
            heads_speech: vec![Matrix::zeros(ks, dm); ns],
            heads_audio: vec![Matrix::zeros(ka, dm); na],
            window: shape.window,
        })
    }

    /// Gaussian initialisation scaled by fan-in; biases start at zero.
    pub fn init(shape: StudentShape, seed: u64) -> Result<Self> {
        let mut model = Self::zeros(shape)?;
        let mut rng = Rng::new(seed, streams::STUDENT_INIT);
        let fill = |m: &mut Matrix<T>, std: f64, rng: &mut Rng| {
            m.as_mut_slice()
                .iter_mut()
                .for_each(|x| *x = T::lit(std * rng.normal()));
        };
        let dm = shape.d_model as f64;
        fill(&mut model.mask_embedding, 1.0, &mut rng);
        fill(
            &mut model.input_proj,
            (1.0 / shape.d_in as f64).sqrt(),
            &mut rng,
        );
        let conv_std = (1.0 / (shape.window as f64 * dm)).sqrt();
        for block in &mut model.blocks {
            for tap in &mut block.taps {
                fill(tap, conv_std, &mut rng);
            }
        }
        let head_std = 0.1 * (1.0 / dm).sqrt();
        for head in model
            .heads_speech
            .iter_mut()
            .chain(model.heads_audio.iter_mut())
        {
            fill(head, head_std, &mut rng);
        }
        Ok(model)
    }

    pub fn zeros_like(&self) -> Self {
        let z = |ms: &[Matrix<T>]| ms.iter().map(Matrix::zeros_like).collect::<Vec<_>>();
        Self {
            mask_embedding: self.mask_embedding.zeros_like(),
            input_proj: self.input_proj.zeros_like(),
            input_bias: self.input_bias.zeros_like(),
            blocks: self
                .blocks
                .iter()
                .map(|b| ConvBlock {
                    taps: z(&b.taps),
                    bias: b.bias.zeros_like(),
                })
                .collect(),
            heads_speech: z(&self.heads_speech),
            heads_audio: z(&self.heads_audio),
            window: self.window,
        }
    }

    pub fn shape(&self) -> StudentShape {
        StudentShape {
            d_in: self.input_proj.cols(),
            d_model: self.input_proj.rows(),
            layers: self.blocks.len(),
            window: self.window,
            speech_heads: (self.heads_speech.len(), self.heads_speech[0].rows()),
            audio_heads: self
                .heads_audio
                .first()
                .map(|h| (self.heads_audio.len(), h.rows())),
        }
    }

    pub fn d_in(&self) -> usize {
        self.input_proj.cols()
    }

    pub fn d_model(&self) -> usize {
        self.input_proj.rows()
    }

    pub fn window(&self) -> usize {
        self.window
    }

    /// Parameter tensors in a fixed order: mask embedding, input projection,
    /// input bias, per block (taps, bias), speech heads, audio heads.
    pub fn parameters(&self) -> Vec<&Matrix<T>> {
        let mut out = vec![&self.mask_embedding, &self.input_proj, &self.input_bias];
        for b in &self.blocks {
            out.extend(b.taps.iter());
            out.push(&b.bias);
        }
        out.extend(self.heads_speech.iter());
        out.extend(self.heads_audio.iter());
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Matrix<T>> {
        let mut out = vec![
            &mut self.mask_embedding,
            &mut self.input_proj,
            &mut self.input_bias,
        ];
        for b in &mut self.blocks {
            out.extend(b.taps.iter_mut());
            out.push(&mut b.bias);
        }
        out.extend(self.heads_speech.iter_mut());
        out.extend(self.heads_audio.iter_mut());
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.parameters().iter().map(|p| p.as_slice().len()).sum()
    }

    /// `self += scale · other` over every parameter.
    pub fn accumulate(&mut self, other: &Self, scale: T) {
        for (a, b) in self.parameters_mut().into_iter().zip(other.parameters()) {
            a.axpy(scale, b);
        }
    }

    /// Encoder-only part of the model is the same shape in both.
    fn check_compatible(&self, other: &Self) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::shape(
                format!("{:?}", self.shape()),
                format!("{:?}", other.shape()),
            ));
        }
        Ok(())
    }
}

/// Intermediates of [`student_forward`] needed for backprop.
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    input: Matrix<T>,
    /// `h_0 … h_L`; the last one is the encoder output `H`.
    hidden: Vec<Matrix<T>>,
    /// `tanh` outputs of each block.
    activations: Vec<Matrix<T>>,
}

impl<T: Real> ForwardCache<T> {
    pub fn output(&self) -> &Matrix<T> {
        self.hidden.last().expect("at least h_0")
    }

    pub fn input(&self) -> &Matrix<T> {
        &self.input
    }
}

/// Runs the encoder over a (masked) `T × d_in` input.
pub fn student_forward<T: Real>(
    input: &Matrix<T>,
    model: &StudentModel<T>,
) -> Result<ForwardCache<T>> {
    if input.cols() != model.d_in() {
        return Err(Error::shape(
            format!("input of dim {}", model.d_in()),
            input.cols(),
        ));
    }
    let frames = input.rows();
    let dm = model.d_model();
    let mut h0 = Matrix::zeros(frames, dm);
    let bias = model.input_bias.as_slice();
    for t in 0..frames {
        let x = input.row(t);
        let out = h0.row_mut(t);
        for ((o, w), &b) in out.iter_mut().zip(model.input_proj.iter_rows()).zip(bias) {
            *o = crate::numerics::dot(w, x) + b;
        }
    }
    let mut hidden = vec![h0];
    let mut activations = Vec::with_capacity(model.blocks.len());
    let radius = model.window / 2;
    for block in &model.blocks {
        let h = hidden.last().expect("h_0");
        let mut act = Matrix::zeros(frames, dm);
        for t in 0..frames {
            let a = act.row_mut(t);
            a.copy_from_slice(block.bias.as_slice());
            for (j, tap) in block.taps.iter().enumerate() {
                let Some(src) = (t + j).checked_sub(radius).filter(|&s| s < frames) else {
                    continue;
                };
                let hs = h.row(src);
                for (o, w) in a.iter_mut().zip(tap.iter_rows()) {
                    *o += crate::numerics::dot(w, hs);
                }
            }
            a.iter_mut().for_each(|v| *v = v.tanh());
        }
        let mut next = h.clone();
        next.axpy(T::one(), &act);
        activations.push(act);
        hidden.push(next);
    }
    Ok(ForwardCache {
        input: input.clone(),
        hidden,
        activations,
    })
}

/// Backpropagates `grad_output = ∂L/∂H` through the encoder, adding parameter
/// gradients into `grads`, and returns `∂L/∂input`.
pub fn student_backward<T: Real>(
    cache: &ForwardCache<T>,
    grad_output: &Matrix<T>,
    model: &StudentModel<T>,
    grads: &mut StudentModel<T>,
) -> Result<Matrix<T>> {
    model.check_compatible(grads)?;
    if grad_output.shape() != cache.output().shape() {
        return Err(Error::shape(
            format!("{:?}", cache.output().shape()),
            format!("{:?}", grad_output.shape()),
        ));
    }
    let frames = cache.input.rows();
    let dm = model.d_model();
    let radius = model.window / 2;
    let mut dh = grad_output.clone();
    let mut da = vec![T::zero(); dm];
    for (l, block) in model.blocks.iter().enumerate().rev() {
        let h = &cache.hidden[l];
        let act = &cache.activations[l];
        let gblock = &mut grads.blocks[l];
        // residual path passes dh through unchanged
        let mut dh_prev = dh.clone();
        for t in 0..frames {
            for ((g, &d), &y) in da.iter_mut().zip(dh.row(t)).zip(act.row(t)) {
                *g = d * (T::one() - y * y);
            }
            gblock
                .bias
                .as_mut_slice()
                .iter_mut()
                .zip(&da)
                .for_each(|(b, &g)| *b += g);
            for (j, tap) in block.taps.iter().enumerate() {
                let Some(src) = (t + j).checked_sub(radius).filter(|&s| s < frames) else {
                    continue;
                };
                gblock.taps[j].add_outer(&da, h.row(src), T::one());
                tap.add_matvec_transposed(&da, dh_prev.row_mut(src));
            }
        }
        dh = dh_prev;
    }
    let mut grad_input = Matrix::zeros(frames, model.d_in());
    for t in 0..frames {
        let g = dh.row(t);
        grads.input_proj.add_outer(g, cache.input.row(t), T::one());
        grads
            .input_bias
            .as_mut_slice()
            .iter_mut()
            .zip(g)
            .for_each(|(b, &v)| *b += v);
        model
            .input_proj
            .add_matvec_transposed(g, grad_input.row_mut(t));
    }
    Ok(grad_input)
}
