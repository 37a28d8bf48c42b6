//! Two-stage alignment training.

use foodseg_nn::image::stack;
use foodseg_nn::optim::Adam;
use foodseg_nn::{Graph, Tensor};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{ReLeMError, Result};
use crate::loss::{cosine_margin_loss, semantic_loss, PairLabel};
use crate::model::{ReLeMConfig, ReLeMModel, TEXT, VISION};
use crate::recipe::Recipe;

/// Images `[3, S, S]`, recipes, and which recipe each image depicts.
#[derive(Debug, Clone)]
pub struct PairedDataset {
    pub images: Vec<Tensor>,
    pub recipes: Vec<Recipe>,
    /// `(image index, recipe index)`.
    pub pairs: Vec<(usize, usize)>,
}

impl PairedDataset {
    pub fn validate(&self) -> Result<()> {
        if self.pairs.is_empty() {
            return Err(ReLeMError::EmptyDataset);
        }
        let shape = self.images.first().ok_or(ReLeMError::EmptyDataset)?.shape();
        if let Some(t) = self.images.iter().find(|t| t.shape() != shape) {
            return Err(ReLeMError::Shape(format!("image {:?} differs from {shape:?}", t.shape())));
        }
        for &(i, r) in &self.pairs {
            if i >= self.images.len() || r >= self.recipes.len() {
                return Err(ReLeMError::Corpus(format!("pair ({i}, {r}) out of range")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepLog {
    pub step: usize,
    pub stage: u8,
    pub loss: f64,
    pub cosine_loss: f64,
    pub semantic_loss: f64,
    /// Mean cosine similarity over the batch.
    pub mean_cosine: f64,
    pub negatives: usize,
    pub missing_labels: usize,
}

pub struct Pretrainer {
    pub model: ReLeMModel,
    pub config: ReLeMConfig,
    data: PairedDataset,
    optimizer: Adam,
    rng: ChaCha8Rng,
    order: Vec<usize>,
    cursor: usize,
    step: usize,
    pub log: Vec<StepLog>,
}

impl Pretrainer {
    pub fn new(model: ReLeMModel, config: ReLeMConfig, data: PairedDataset) -> Result<Self> {
        config.validate()?;
        data.validate()?;
        for r in &data.recipes {
            r.validate(model.text.vocab_size, model.num_semantic)?;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(1);
        Ok(Self {
            model,
            config,
            data,
            optimizer: Adam::default(),
            rng,
            order: Vec::new(),
            cursor: 0,
            step: 0,
            log: Vec::new(),
        })
    }

    pub fn steps_done(&self) -> usize {
        self.step
    }

    pub fn is_done(&self) -> bool {
        self.step >= self.config.total_steps
    }

    /// 1 while the vision tower is frozen, 2 afterwards.
    pub fn current_stage(&self) -> u8 {
        if self.step < self.config.stage1_steps {
            1
        } else {
            2
        }
    }

    fn next_pair(&mut self) -> usize {
        if self.cursor >= self.order.len() {
            self.order = (0..self.data.pairs.len()).collect();
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        self.cursor += 1;
        self.order[self.cursor - 1]
    }

    pub fn step(&mut self) -> Result<StepLog> {
        if self.is_done() {
            return Err(ReLeMError::Finished(self.config.total_steps));
        }
        let stage = self.current_stage();
        if self.step == self.config.stage1_steps {
            self.optimizer = Adam::default();
        }
        self.model.store.set_trainable(VISION, stage == 2);
        self.model.store.set_trainable(TEXT, stage == 1);

        let n_recipes = self.data.recipes.len();
        let mut batch = Vec::with_capacity(self.config.batch_size);
        for _ in 0..self.config.batch_size {
            let p = self.next_pair();
            let (img, own) = self.data.pairs[p];
            let negative = n_recipes > 1 && self.rng.gen_bool(self.config.negative_pair_probability);
            let (recipe, label) = if negative {
                let j = self.rng.gen_range(0..n_recipes - 1);
                (if j >= own { j + 1 } else { j }, PairLabel::Mismatch)
            } else {
                (own, PairLabel::Match)
            };
            batch.push((img, own, recipe, label));
        }

        let model = &self.model;
        let b = batch.len();
        let d = model.dim;
        let k = model.num_semantic;
        let mut g = Graph::new(&model.store);
        let images: Vec<&Tensor> = batch.iter().map(|x| &self.data.images[x.0]).collect();
        let x = g.input(stack(&images));
        let v_raw = model.vision_forward(&mut g, x)?;
        let mut rows = Vec::with_capacity(b);
        for &(_, _, r, _) in &batch {
            rows.push(model.text.forward(&mut g, &self.data.recipes[r])?);
        }
        let t_raw = g.concat(&rows, 0);

        let (vr, tr) = (g.value(v_raw).data().to_vec(), g.value(t_raw).data().to_vec());
        let mut cos_value = 0.0;
        let mut mean_cos = 0.0;
        let mut gv = vec![0.0; b * d];
        let mut gt = vec![0.0; b * d];
        for (i, &(_, _, _, label)) in batch.iter().enumerate() {
            let c = cosine_margin_loss(&vr[i * d..(i + 1) * d], &tr[i * d..(i + 1) * d], label, self.config.alpha)?;
            cos_value += c.value / b as f64;
            mean_cos += c.cosine / b as f64;
            for j in 0..d {
                gv[i * d + j] = c.grad_v[j] / b as f64;
                gt[i * d + j] = c.grad_t[j] / b as f64;
            }
        }
        let cos_loss = g.custom_scalar(
            &[v_raw, t_raw],
            cos_value,
            vec![Tensor::new(&[b, d], gv), Tensor::new(&[b, d], gt)],
        );

        let v_unit = g.l2_normalize(v_raw);
        let t_unit = g.l2_normalize(t_raw);
        let lv = model.vision_head.forward(&mut g, v_unit);
        let lt = model.text_head.forward(&mut g, t_unit);
        let (zv, zt) = (g.value(lv).data().to_vec(), g.value(lt).data().to_vec());
        let mut sem_value = 0.0;
        let mut missing = 0;
        let mut gzv = vec![0.0; b * k];
        let mut gzt = vec![0.0; b * k];
        for (i, &(_, own, r, _)) in batch.iter().enumerate() {
            let s = semantic_loss(
                &zv[i * k..(i + 1) * k],
                &zt[i * k..(i + 1) * k],
                self.data.recipes[own].semantic_label,
                self.data.recipes[r].semantic_label,
            )?;
            sem_value += s.value / b as f64;
            missing += s.missing_v as usize + s.missing_t as usize;
            for j in 0..k {
                gzv[i * k + j] = s.grad_v[j] / b as f64;
                gzt[i * k + j] = s.grad_t[j] / b as f64;
            }
        }
        let sem_loss = g.custom_scalar(
            &[lv, lt],
            sem_value,
            vec![Tensor::new(&[b, k], gzv), Tensor::new(&[b, k], gzt)],
        );
        let weighted = g.scale(sem_loss, self.config.lambda_semantic);
        let total = g.add(cos_loss, weighted);
        let loss = g.value(total).item();
        let grads = g.backward(total);
        drop(g);
        self.optimizer.step(&mut self.model.store, &grads, self.config.lr);

        let entry = StepLog {
            step: self.step,
            stage,
            loss,
            cosine_loss: cos_value,
            semantic_loss: sem_value,
            mean_cosine: mean_cos,
            negatives: batch.iter().filter(|x| x.3 == PairLabel::Mismatch).count(),
            missing_labels: missing,
        };
        self.step += 1;
        self.log.push(entry.clone());
        Ok(entry)
    }

    /// Runs the remaining steps.
    pub fn run(&mut self) -> Result<()> {
        while !self.is_done() {
            self.step()?;
        }
        self.model.store.set_trainable(VISION, true);
        self.model.store.set_trainable(TEXT, true);
        Ok(())
    }

    pub fn into_model(self) -> ReLeMModel {
        self.model
    }
}

/// Mean Euclidean distance over all pairs of embeddings sharing a label, or
/// `None` when no label occurs twice.
pub fn mean_intra_class_distance(embeddings: &[Vec<f64>], labels: &[usize]) -> Option<f64> {
    assert_eq!(embeddings.len(), labels.len());
    let mut sum = 0.0;
    let mut count = 0usize;
    for i in 0..embeddings.len() {
        for j in i + 1..embeddings.len() {
            if labels[i] == labels[j] {
                let d2: f64 = embeddings[i]
                    .iter()
                    .zip(&embeddings[j])
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                sum += d2.sqrt();
                count += 1;
            }
        }
    }
    (count > 0).then(|| sum / count as f64)
}
