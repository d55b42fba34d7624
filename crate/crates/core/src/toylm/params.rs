use std::ops::Range;
use std::path::Path;
use std::sync::Arc;
use std::fs;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde_json::{json, Value};

use super::{LmError, ModelConfig};
use crate::compose::{CompositionalVocab, InputSlot};
use crate::transforms::{EmbeddingMatrix, MatrixRole, Rows};

#[derive(Debug, Clone, PartialEq)]
pub struct LayerIdx {
    pub ln1_g: Range<usize>,
    pub ln1_b: Range<usize>,
    pub wqkv: Range<usize>,
    pub bqkv: Range<usize>,
    pub wo: Range<usize>,
    pub bo: Range<usize>,
    pub ln2_g: Range<usize>,
    pub ln2_b: Range<usize>,
    pub wfc: Range<usize>,
    pub bfc: Range<usize>,
    pub wproj: Range<usize>,
    pub bproj: Range<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorInfo {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub range: Range<usize>,
}

/// Offsets of every named tensor inside the flat parameter buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub tensors: Vec<TensorInfo>,
    pub wte: Range<usize>,
    pub wpe: Range<usize>,
    pub layers: Vec<LayerIdx>,
    pub lnf_g: Range<usize>,
    pub lnf_b: Range<usize>,
    /// Equal to `wte` when embeddings are tied.
    pub unembed: Range<usize>,
    pub e_t: Option<Range<usize>>,
    pub u_t: Option<Range<usize>>,
    pub len: usize,
}

struct Builder {
    tensors: Vec<TensorInfo>,
    len: usize,
}

impl Builder {
    fn add(&mut self, name: String, rows: usize, cols: usize) -> Range<usize> {
        let range = self.len..self.len + rows * cols;
        self.len = range.end;
        self.tensors.push(TensorInfo {
            name,
            rows,
            cols,
            range: range.clone(),
        });
        range
    }
}

impl Layout {
    pub fn new(cfg: &ModelConfig, n_transforms: Option<usize>) -> Self {
        let c = cfg.dim;
        let f = cfg.ffn_dim();
        let mut b = Builder {
            tensors: Vec::new(),
            len: 0,
        };
        let wte = b.add("wte".into(), cfg.vocab_rows, c);
        let wpe = b.add("wpe".into(), cfg.max_seq, c);
        let layers = (0..cfg.n_layers)
            .map(|l| {
                let p = |s: &str| format!("layers.{l}.{s}");
                LayerIdx {
                    ln1_g: b.add(p("ln1.g"), 1, c),
                    ln1_b: b.add(p("ln1.b"), 1, c),
                    wqkv: b.add(p("attn.wqkv"), 3 * c, c),
                    bqkv: b.add(p("attn.bqkv"), 1, 3 * c),
                    wo: b.add(p("attn.wo"), c, c),
                    bo: b.add(p("attn.bo"), 1, c),
                    ln2_g: b.add(p("ln2.g"), 1, c),
                    ln2_b: b.add(p("ln2.b"), 1, c),
                    wfc: b.add(p("mlp.wfc"), f, c),
                    bfc: b.add(p("mlp.bfc"), 1, f),
                    wproj: b.add(p("mlp.wproj"), c, f),
                    bproj: b.add(p("mlp.bproj"), 1, c),
                }
            })
            .collect();
        let lnf_g = b.add("lnf.g".into(), 1, c);
        let lnf_b = b.add("lnf.b".into(), 1, c);
        let unembed = if cfg.tie_embeddings {
            wte.clone()
        } else {
            b.add("unembed".into(), cfg.vocab_rows, c)
        };
        let (e_t, u_t) = match n_transforms {
            Some(n) => (Some(b.add("comp.e_t".into(), n, c)), Some(b.add("comp.u_t".into(), n, c))),
            None => (None, None),
        };
        Layout {
            tensors: b.tensors,
            wte,
            wpe,
            layers,
            lnf_g,
            lnf_b,
            unembed,
            e_t,
            u_t,
            len: b.len,
        }
    }

    pub fn get(&self, name: &str) -> Option<&TensorInfo> {
        self.tensors.iter().find(|t| t.name == name)
    }
}

/// Which parameters receive updates.
#[derive(Debug, Clone, PartialEq)]
pub enum TrainMask {
    All,
    InputTransforms,
    OutputTransforms,
    Named(Vec<String>),
}

#[derive(Debug, Clone)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub layout: Layout,
    pub data: Vec<f32>,
    pub comp: Option<Arc<CompositionalVocab>>,
}

impl ModelParams {
    pub fn dim(&self) -> usize {
        self.config.dim
    }

    pub fn tensor(&self, name: &str) -> Option<&[f32]> {
        self.layout.get(name).map(|t| &self.data[t.range.clone()])
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut [f32]> {
        let r = self.layout.get(name)?.range.clone();
        Some(&mut self.data[r])
    }

    pub fn wte(&self) -> Rows<'_> {
        Rows::new(&self.data[self.layout.wte.clone()], self.config.dim)
    }

    pub fn unembed(&self) -> Rows<'_> {
        Rows::new(&self.data[self.layout.unembed.clone()], self.config.dim)
    }

    pub fn e_t(&self) -> Rows<'_> {
        match &self.layout.e_t {
            Some(r) => Rows::new(&self.data[r.clone()], self.config.dim),
            None => Rows::new(&[], self.config.dim),
        }
    }

    pub fn u_t(&self) -> Rows<'_> {
        match &self.layout.u_t {
            Some(r) => Rows::new(&self.data[r.clone()], self.config.dim),
            None => Rows::new(&[], self.config.dim),
        }
    }

    pub fn is_compositional(&self) -> bool {
        self.comp.is_some()
    }

    /// Input vector of one slot, before the position embedding.
    pub fn slot_embedding_into(&self, slot: InputSlot, out: &mut [f32]) {
        match (&self.comp, slot) {
            (Some(cv), _) => cv.slot_embedding_into(self.wte(), self.e_t(), slot, out),
            (None, InputSlot::Plain(id)) => out.copy_from_slice(self.wte().row(id as usize)),
            (None, InputSlot::Composed(_)) => panic!("composed slot on a plain model"),
        }
    }

    /// Parameter ranges selected by a mask.
    pub fn mask_ranges(&self, mask: &TrainMask) -> Result<Vec<Range<usize>>, LmError> {
        Ok(match mask {
            TrainMask::All => vec![0..self.layout.len],
            TrainMask::InputTransforms => vec![self
                .layout
                .e_t
                .clone()
                .ok_or_else(|| LmError::InvalidConfig("model has no transformation rows".into()))?],
            TrainMask::OutputTransforms => vec![self
                .layout
                .u_t
                .clone()
                .ok_or_else(|| LmError::InvalidConfig("model has no transformation rows".into()))?],
            TrainMask::Named(names) => names
                .iter()
                .map(|n| {
                    self.layout
                        .get(n)
                        .map(|t| t.range.clone())
                        .ok_or_else(|| LmError::InvalidConfig(format!("unknown tensor {n}")))
                })
                .collect::<Result<_, _>>()?,
        })
    }

    /// Adds transformation rows initialised from the vocabulary's table.
    pub fn attach(&self, cv: Arc<CompositionalVocab>) -> Result<ModelParams, LmError> {
        if cv.vocab.len() != self.config.vocab_rows {
            return Err(LmError::InvalidConfig(format!(
                "vocabulary has {} tokens, model has {} rows",
                cv.vocab.len(),
                self.config.vocab_rows
            )));
        }
        if cv.table.dim() != self.config.dim && !cv.table.is_empty() {
            return Err(LmError::InvalidConfig("transformation table dimension differs from model".into()));
        }
        let n = cv.table.len();
        let layout = Layout::new(&self.config, Some(n));
        let mut data = self.data[..self.base_len()].to_vec();
        data.resize(layout.len, 0.0);
        data[layout.e_t.clone().unwrap()].copy_from_slice(&cv.table.input_offsets.data);
        data[layout.u_t.clone().unwrap()].copy_from_slice(&cv.table.output_offsets.data);
        Ok(ModelParams {
            config: self.config.clone(),
            layout,
            data,
            comp: Some(cv),
        })
    }

    /// Same weights without the compositional layer.
    pub fn detach(&self) -> ModelParams {
        let layout = Layout::new(&self.config, None);
        ModelParams {
            config: self.config.clone(),
            data: self.data[..layout.len].to_vec(),
            layout,
            comp: None,
        }
    }

    fn base_len(&self) -> usize {
        self.layout.e_t.as_ref().map_or(self.layout.len, |r| r.start)
    }

    /// Input and output base embeddings (the same rows when tied).
    pub fn embedding_matrices(&self) -> (EmbeddingMatrix, EmbeddingMatrix) {
        let d = self.config.dim;
        let (e, u) = (self.wte(), self.unembed());
        (
            EmbeddingMatrix::from_data(e.rows, d, e.data.to_vec()).expect("finite").with_role(MatrixRole::InputEmbedding),
            EmbeddingMatrix::from_data(u.rows, d, u.data.to_vec()).expect("finite").with_role(MatrixRole::OutputUnembedding),
        )
    }

    /// Copies the current transformation rows into `EmbeddingMatrix` form.
    pub fn transform_rows(&self) -> (EmbeddingMatrix, EmbeddingMatrix) {
        let d = self.config.dim;
        let e = self.e_t();
        let u = self.u_t();
        (
            EmbeddingMatrix::from_data(e.rows, d, e.data.to_vec()).expect("finite"),
            EmbeddingMatrix::from_data(u.rows, d, u.data.to_vec()).expect("finite"),
        )
    }

    pub fn save_checkpoint(&self, dir: &Path) -> Result<(), LmError> {
        fs::create_dir_all(dir)?;
        let mut tensors = Vec::new();
        for t in &self.layout.tensors {
            let file = format!("{}.vemb", t.name);
            let m = EmbeddingMatrix::from_data(t.rows, t.cols, self.data[t.range.clone()].to_vec())
                .map_err(|_| LmError::Numeric(format!("non-finite values in {}", t.name)))?;
            fs::write(dir.join(&file), m.to_vemb())?;
            tensors.push(json!({"name": t.name, "rows": t.rows, "cols": t.cols, "file": file}));
        }
        let doc = json!({
            "format": "morphovoc-checkpoint",
            "version": 1,
            "config": serde_json::to_value(&self.config).expect("config"),
            "compositional": self.comp.is_some(),
            "tensors": tensors,
        });
        let mut text = serde_json::to_vec_pretty(&doc).expect("json");
        text.push(b'\n');
        fs::write(dir.join("config.json"), text)?;
        Ok(())
    }

    /// A compositional checkpoint needs the matching vocabulary.
    pub fn load_checkpoint(dir: &Path, cv: Option<Arc<CompositionalVocab>>) -> Result<ModelParams, LmError> {
        let doc: Value = serde_json::from_slice(&fs::read(dir.join("config.json"))?)
            .map_err(|e| LmError::Format(format!("config.json: {e}")))?;
        if doc.get("version").and_then(Value::as_u64) != Some(1) {
            return Err(LmError::Format("unsupported checkpoint version".into()));
        }
        let config: ModelConfig = serde_json::from_value(doc["config"].clone()).map_err(|e| LmError::Format(format!("config: {e}")))?;
        config.validate()?;
        let compositional = doc.get("compositional").and_then(Value::as_bool).unwrap_or(false);
        let n_t = match (&cv, compositional) {
            (Some(cv), true) => Some(cv.table.len()),
            (None, false) => None,
            (None, true) => return Err(LmError::InvalidConfig("compositional checkpoint needs its vocabulary".into())),
            (Some(_), false) => return Err(LmError::InvalidConfig("checkpoint has no transformation rows".into())),
        };
        let layout = Layout::new(&config, n_t);
        let mut data = vec![0.0; layout.len];
        let listed = doc["tensors"].as_array().ok_or_else(|| LmError::Format("tensors".into()))?;
        if listed.len() != layout.tensors.len() {
            return Err(LmError::Format("tensor count differs from config".into()));
        }
        for (t, entry) in layout.tensors.iter().zip(listed) {
            let file = entry["file"].as_str().ok_or_else(|| LmError::Format(format!("{}: file", t.name)))?;
            if entry["name"].as_str() != Some(t.name.as_str()) {
                return Err(LmError::Format(format!("expected tensor {}", t.name)));
            }
            let m = EmbeddingMatrix::from_vemb(&fs::read(dir.join(file))?).map_err(|e| LmError::Format(format!("{file}: {e}")))?;
            if m.rows != t.rows || m.dim != t.cols {
                return Err(LmError::Format(format!("{}: shape {}x{}", t.name, m.rows, m.dim)));
            }
            data[t.range.clone()].copy_from_slice(&m.data);
        }
        Ok(ModelParams {
            config,
            layout,
            data,
            comp: if compositional { cv } else { None },
        })
    }
}

/// Scaled-normal matrices (std 0.02, residual projections 0.02/sqrt(2L)),
/// unit norm gains, zero biases.
pub fn init_model(config: &ModelConfig) -> Result<ModelParams, LmError> {
    config.validate()?;
    let layout = Layout::new(config, None);
    let mut data = vec![0.0f32; layout.len];
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let std = 0.02f32;
    let proj_std = std / (2.0 * config.n_layers as f32).sqrt();
    let fill = |data: &mut [f32], s: f32, rng: &mut ChaCha8Rng| {
        let n = Normal::new(0.0f32, s).unwrap();
        for x in data.iter_mut() {
            *x = n.sample(rng);
        }
    };
    for t in &layout.tensors {
        let name = t.name.as_str();
        let slice = &mut data[t.range.clone()];
        if name.ends_with(".g") {
            slice.fill(1.0);
        } else if name.contains(".b") {
            // biases stay zero
        } else if name.ends_with("wo") || name.ends_with("wproj") {
            fill(slice, proj_std, &mut rng);
        } else {
            fill(slice, std, &mut rng);
        }
    }
    Ok(ModelParams {
        config: config.clone(),
        layout,
        data,
        comp: None,
    })
}
