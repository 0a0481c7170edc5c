//! The learnable architecture: optional input FC, a transformer or LSTM
//! video-level aggregator, and the per-instance MIL scoring head.

mod bert;
pub mod checkpoint;
mod lstm;
mod mil;

pub use bert::{BertNet, BertOutput};
pub use lstm::LstmNet;
pub use mil::MilHead;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::data::NUM_SEGMENTS;
use crate::error::{Error, Result};
use crate::rng::{stream, stream_rng};
use crate::tensor::Tensor;

/// Training applies dropout through the supplied stream; evaluation is
/// deterministic and dropout-free.
pub enum Phase<'a> {
    Train { rng: &'a mut ChaCha8Rng },
    Eval,
}

impl Phase<'_> {
    fn apply_dropout(&mut self, t: &Tensor, p: f32) -> Tensor {
        match self {
            Phase::Train { rng } if p > 0.0 => t.dropout(p, rng),
            _ => t.clone(),
        }
    }

    pub fn is_train(&self) -> bool {
        matches!(self, Phase::Train { .. })
    }
}

/// Which features the MIL scoring head consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum MilInput {
    /// Pooled segment features x_i (the default and strongest choice).
    Segment,
    /// Aggregator-refined features y_i (requires the transformer).
    Refined,
    /// Raw per-snippet features f_i, skipping segmentation for scoring.
    Snippet,
}

impl MilInput {
    pub fn parse(s: &str) -> Result<MilInput> {
        match s {
            "x_i" => Ok(MilInput::Segment),
            "y_i" => Ok(MilInput::Refined),
            "f_i" => Ok(MilInput::Snippet),
            other => Err(Error::Config(format!(
                "unknown mil input '{}' (expected x_i, y_i, or f_i)",
                other
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            MilInput::Segment => "x_i",
            MilInput::Refined => "y_i",
            MilInput::Snippet => "f_i",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum AggregatorKind {
    Bert,
    Lstm,
}

impl AggregatorKind {
    pub fn parse(s: &str) -> Result<AggregatorKind> {
        match s {
            "bert" => Ok(AggregatorKind::Bert),
            "lstm" => Ok(AggregatorKind::Lstm),
            other => Err(Error::Config(format!(
                "unknown aggregator '{}' (expected bert or lstm)",
                other
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            AggregatorKind::Bert => "bert",
            AggregatorKind::Lstm => "lstm",
        }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BertConfig {
    /// Internal width; `None` means "same as the incoming feature dim".
    pub dim_model: Option<usize>,
    pub layers: usize,
    pub heads: usize,
    pub seq_len: usize,
    /// Width multiplier of the position-wise feed-forward hidden layer.
    pub ff_mult: usize,
    pub dropout_p: f32,
}

impl Default for BertConfig {
    fn default() -> Self {
        BertConfig {
            dim_model: None,
            layers: 2,
            heads: 8,
            seq_len: NUM_SEGMENTS,
            ff_mult: 4,
            dropout_p: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ModelConfig {
    /// Dimension of the raw snippet features on disk.
    pub feature_dim: usize,
    /// When set, a trainable linear+ReLU maps raw features to this width
    /// before everything else (used to take 2048-dim features to 1024).
    pub input_fc_dim: Option<usize>,
    pub aggregator: AggregatorKind,
    pub bert: BertConfig,
    pub mil_input: MilInput,
    /// Dropout after the first two MIL head layers.
    pub mil_dropout: f32,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            feature_dim: 1024,
            input_fc_dim: None,
            aggregator: AggregatorKind::Bert,
            bert: BertConfig::default(),
            mil_input: MilInput::Segment,
            mil_dropout: 0.6,
        }
    }
}

impl ModelConfig {
    /// Feature dim after the optional input FC; what the aggregator sees.
    pub fn working_dim(&self) -> usize {
        self.input_fc_dim.unwrap_or(self.feature_dim)
    }

    pub fn dim_model(&self) -> usize {
        self.bert.dim_model.unwrap_or_else(|| self.working_dim())
    }

    pub fn validate(&self) -> Result<()> {
        if self.feature_dim == 0 {
            return Err(Error::Config("feature_dim must be positive".into()));
        }
        if self.input_fc_dim == Some(0) {
            return Err(Error::Config("input_fc_dim must be positive".into()));
        }
        if self.aggregator == AggregatorKind::Bert {
            let dm = self.dim_model();
            if self.bert.layers == 0 || self.bert.heads == 0 {
                return Err(Error::Config("transformer needs at least 1 layer and 1 head".into()));
            }
            if self.bert.seq_len == 0 {
                return Err(Error::Config("seq_len must be at least 1".into()));
            }
            if dm % self.bert.heads != 0 {
                return Err(Error::Config(format!(
                    "dim_model {} not divisible by heads {}",
                    dm, self.bert.heads
                )));
            }
            if !(0.0..1.0).contains(&self.bert.dropout_p) {
                return Err(Error::Config("dropout_p must be in [0, 1)".into()));
            }
        }
        if self.mil_input == MilInput::Refined && self.aggregator != AggregatorKind::Bert {
            return Err(Error::Config(
                "mil input y_i requires the bert aggregator".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.mil_dropout) {
            return Err(Error::Config("mil_dropout must be in [0, 1)".into()));
        }
        Ok(())
    }

    /// Dimension of the rows the MIL head scores.
    pub fn mil_dim(&self) -> usize {
        match self.mil_input {
            MilInput::Segment | MilInput::Snippet => self.working_dim(),
            MilInput::Refined => self.dim_model(),
        }
    }
}

/// Linear layer `x @ w + b` with `w: [in, out]`, `b: [out]`.
pub struct Linear {
    pub w: Tensor,
    pub b: Tensor,
}

impl Linear {
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        x.matmul(&self.w)?.add_bias(&self.b)
    }
}

/// Parameter factory drawing from one seeded stream in registration order,
/// collecting (name, tensor) pairs as it goes.
pub(crate) struct ParamBuilder<'a> {
    rng: &'a mut ChaCha8Rng,
    params: Vec<(String, Tensor)>,
}

impl<'a> ParamBuilder<'a> {
    fn new(rng: &'a mut ChaCha8Rng) -> Self {
        ParamBuilder {
            rng,
            params: Vec::new(),
        }
    }

    fn register(&mut self, name: &str, data: Vec<f32>, shape: Vec<usize>) -> Tensor {
        let t = Tensor::param(data, shape).expect("init shapes are internally consistent");
        self.params.push((name.to_string(), t.clone()));
        t
    }

    pub(crate) fn gaussian(&mut self, name: &str, shape: Vec<usize>, std: f32) -> Tensor {
        let n: usize = shape.iter().product();
        let data: Vec<f32> = (0..n)
            .map(|_| {
                let u: f64 = rand_distr::Distribution::sample(&rand_distr::StandardNormal, self.rng);
                (u * std as f64) as f32
            })
            .collect();
        self.register(name, data, shape)
    }

    pub(crate) fn uniform(&mut self, name: &str, shape: Vec<usize>, bound: f32) -> Tensor {
        let n: usize = shape.iter().product();
        let data: Vec<f32> = (0..n).map(|_| self.rng.gen_range(-bound..bound)).collect();
        self.register(name, data, shape)
    }

    pub(crate) fn fill(&mut self, name: &str, shape: Vec<usize>, value: f32) -> Tensor {
        let n: usize = shape.iter().product();
        self.register(name, vec![value; n], shape)
    }

    /// Xavier-uniform weight plus zero bias.
    pub(crate) fn linear_xavier(&mut self, name: &str, din: usize, dout: usize) -> Linear {
        let bound = (6.0 / (din + dout) as f32).sqrt();
        Linear {
            w: self.uniform(&format!("{}.w", name), vec![din, dout], bound),
            b: self.fill(&format!("{}.b", name), vec![dout], 0.0),
        }
    }

    /// Small-Gaussian weight plus zero bias (transformer convention).
    pub(crate) fn linear_gaussian(&mut self, name: &str, din: usize, dout: usize) -> Linear {
        Linear {
            w: self.gaussian(&format!("{}.w", name), vec![din, dout], 0.02),
            b: self.fill(&format!("{}.b", name), vec![dout], 0.0),
        }
    }
}

pub enum Aggregator {
    Bert(BertNet),
    Lstm(LstmNet),
}

pub struct Model {
    pub config: ModelConfig,
    pub input_fc: Option<Linear>,
    pub aggregator: Aggregator,
    pub mil: MilHead,
    params: Vec<(String, Tensor)>,
}

/// Everything one forward pass produces. `y_i`/`y_cls`/`attention` are
/// transformer-only.
pub struct ModelOutput {
    /// Per-instance anomaly scores, `[M, 1]` in (0,1).
    pub scores: Tensor,
    /// The feature rows those scores were computed from (still in the graph,
    /// so magnitude-based losses can differentiate through them).
    pub instances: Tensor,
    /// Video-level abnormality probability, `[1, 1]`.
    pub p_video: Tensor,
    /// Refined segment features `[seq_len, dim_model]`.
    pub y_i: Option<Tensor>,
    pub y_cls: Option<Tensor>,
    /// Post-softmax attention, indexed `[layer][head]`, each `[S+1, S+1]`.
    pub attention: Vec<Vec<Tensor>>,
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Model> {
        config.validate()?;
        let mut rng = stream_rng(seed, stream::MODEL_INIT, 0);
        let mut b = ParamBuilder::new(&mut rng);

        let input_fc = config
            .input_fc_dim
            .map(|out| b.linear_xavier("input_fc", config.feature_dim, out));

        let aggregator = match config.aggregator {
            AggregatorKind::Bert => Aggregator::Bert(BertNet::init(&config, &mut b)),
            AggregatorKind::Lstm => Aggregator::Lstm(LstmNet::init(&config, &mut b)),
        };
        let mil = MilHead::init(config.mil_dim(), config.mil_dropout, &mut b);

        Ok(Model {
            config,
            input_fc,
            aggregator,
            mil,
            params: b.params,
        })
    }

    /// Registered parameters in a stable order (construction order).
    pub fn named_params(&self) -> &[(String, Tensor)] {
        &self.params
    }

    pub fn param_tensors(&self) -> Vec<Tensor> {
        self.params.iter().map(|(_, t)| t.clone()).collect()
    }

    pub fn zero_grads(&self) {
        for (_, t) in &self.params {
            t.zero_grad();
        }
    }

    /// Score snippet rows with the MIL head alone, skipping segmentation and
    /// the aggregator (the online scoring path). Models scoring refined
    /// features cannot do this: y_i only exists after the transformer runs.
    pub fn score_snippets(&self, snippets: &Tensor, phase: &mut Phase) -> Result<Tensor> {
        if self.config.mil_input == MilInput::Refined {
            return Err(Error::Contract(
                "online snippet scoring is unavailable for refined-feature models".into(),
            ));
        }
        let shape = snippets.shape();
        if shape.len() != 2 || shape[1] != self.config.feature_dim {
            return Err(Error::shape(
                "model.score_snippets",
                format!(
                    "snippets {:?} do not match feature_dim {}",
                    shape, self.config.feature_dim
                ),
            ));
        }
        let f = match &self.input_fc {
            Some(fc) => fc.forward(snippets)?.relu(),
            None => snippets.clone(),
        };
        self.mil.forward(&f, phase)
    }

    /// Plain-data copy of the parameters, safe to move across threads and
    /// rebuild into an identical model.
    pub fn snapshot(&self) -> ModelSnapshot {
        ModelSnapshot {
            config: self.config.clone(),
            params: self
                .params
                .iter()
                .map(|(n, t)| (n.clone(), t.to_vec()))
                .collect(),
        }
    }

    /// Forward over one video: `snippets` is `[N, feature_dim]`, `pooling`
    /// the `[seq_len, N]` averaging matrix from the data layer.
    pub fn forward(
        &self,
        snippets: &Tensor,
        pooling: &Tensor,
        phase: &mut Phase,
    ) -> Result<ModelOutput> {
        let shape = snippets.shape();
        if shape.len() != 2 || shape[1] != self.config.feature_dim {
            return Err(Error::shape(
                "model.forward",
                format!(
                    "snippets {:?} do not match feature_dim {}",
                    shape, self.config.feature_dim
                ),
            ));
        }
        let seq_len = match &self.aggregator {
            Aggregator::Bert(net) => net.seq_len,
            Aggregator::Lstm(_) => NUM_SEGMENTS,
        };
        let pshape = pooling.shape();
        if pshape != vec![seq_len, shape[0]] {
            return Err(Error::shape(
                "model.forward",
                format!(
                    "pooling {:?} does not map {} snippets to {} segments",
                    pshape, shape[0], seq_len
                ),
            ));
        }

        let f = match &self.input_fc {
            Some(fc) => fc.forward(snippets)?.relu(),
            None => snippets.clone(),
        };
        let x = pooling.matmul(&f)?;

        let (p_video, y_i, y_cls, attention) = match &self.aggregator {
            Aggregator::Bert(net) => {
                let out = net.forward(&x, phase)?;
                (out.p_video, Some(out.y_i), Some(out.y_cls), out.attention)
            }
            Aggregator::Lstm(net) => (net.forward(&x)?, None, None, Vec::new()),
        };

        let mil_in = match self.config.mil_input {
            MilInput::Segment => &x,
            MilInput::Snippet => &f,
            MilInput::Refined => y_i
                .as_ref()
                .ok_or_else(|| Error::Contract("refined features unavailable".into()))?,
        };
        let scores = self.mil.forward(mil_in, phase)?;
        let instances = mil_in.clone();

        Ok(ModelOutput {
            scores,
            instances,
            p_video,
            y_i,
            y_cls,
            attention,
        })
    }
}

/// Parameter values detached from the tensor graph. `Tensor` is not `Send`,
/// so cross-thread scoring moves one of these and rebuilds per thread.
#[derive(Clone)]
pub struct ModelSnapshot {
    pub config: ModelConfig,
    params: Vec<(String, Vec<f32>)>,
}

impl ModelSnapshot {
    pub fn build(&self) -> Result<Model> {
        let model = Model::new(self.config.clone(), 0)?;
        if model.params.len() != self.params.len() {
            return Err(Error::Contract("snapshot parameter count mismatch".into()));
        }
        for ((name, data), (built_name, t)) in self.params.iter().zip(&model.params) {
            if name != built_name {
                return Err(Error::Contract(format!(
                    "snapshot parameter '{}' does not match '{}'",
                    name, built_name
                )));
            }
            t.set_data(data);
        }
        Ok(model)
    }
}
