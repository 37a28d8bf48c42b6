use std::collections::BTreeMap;

use foodseg_core::LabelMap;
use foodseg_nn::archive::Archive;
use foodseg_nn::image::stack;
use foodseg_nn::optim::Sgd;
use foodseg_nn::{Graph, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::augment::augment;
use crate::error::{Result, SegError};
use crate::loss::pixel_ce_loss;
use crate::model::{Segmenter, DECODER, ENCODER};
use crate::schedule::poly_lr;

/// Training images `[3, H, W]` with their label maps.
#[derive(Debug, Clone, Default)]
pub struct SegDataset {
    pub images: Vec<Tensor>,
    pub masks: Vec<LabelMap>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainState {
    pub iteration: usize,
    pub lr: f64,
    pub loss_history: Vec<f64>,
    /// Learning rate used at each iteration, plus the final value at
    /// `max_iters`.
    pub lr_history: Vec<f64>,
    /// Batches in which every pixel was ignored.
    pub empty_batches: usize,
    pub checksums: BTreeMap<String, String>,
}

/// SGD with momentum, weight decay and the poly schedule.
pub struct Trainer {
    pub model: Segmenter,
    data: SegDataset,
    optimizer: Sgd,
    rng: ChaCha8Rng,
    order: Vec<usize>,
    cursor: usize,
    pub state: TrainState,
}

impl Trainer {
    pub fn new(model: Segmenter, data: SegDataset) -> Result<Self> {
        if data.images.is_empty() {
            return Err(SegError::EmptyTrainSplit);
        }
        if data.images.len() != data.masks.len() {
            return Err(SegError::Shape(format!(
                "{} images but {} masks",
                data.images.len(),
                data.masks.len()
            )));
        }
        for (t, m) in data.images.iter().zip(&data.masks) {
            if t.rank() != 3 || t.dim(0) != 3 || t.dim(1) != m.height() || t.dim(2) != m.width() {
                return Err(SegError::Shape(format!(
                    "image {:?} does not match mask {}x{}",
                    t.shape(),
                    m.height(),
                    m.width()
                )));
            }
        }
        let cfg = &model.config;
        let optimizer = Sgd::new(cfg.momentum, cfg.weight_decay);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(2);
        let state = TrainState {
            iteration: 0,
            lr: cfg.base_lr,
            loss_history: Vec::new(),
            lr_history: Vec::new(),
            empty_batches: 0,
            checksums: BTreeMap::new(),
        };
        let mut t = Self {
            model,
            data,
            optimizer,
            rng,
            order: Vec::new(),
            cursor: 0,
            state,
        };
        t.refresh_checksums();
        Ok(t)
    }

    fn refresh_checksums(&mut self) {
        self.state.checksums = BTreeMap::from([
            (ENCODER.to_string(), self.model.encoder_checksum()),
            (DECODER.to_string(), self.model.decoder_checksum()),
        ]);
    }

    pub fn is_done(&self) -> bool {
        self.state.iteration >= self.model.config.max_iters
    }

    fn next_index(&mut self) -> usize {
        if self.cursor >= self.order.len() {
            self.order = (0..self.data.images.len()).collect();
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        self.cursor += 1;
        self.order[self.cursor - 1]
    }

    /// One update; returns the batch loss.
    pub fn step(&mut self) -> Result<f64> {
        let cfg = self.model.config.clone();
        if self.is_done() {
            return Err(SegError::Schedule(format!("all {} iterations done", cfg.max_iters)));
        }
        let lr = poly_lr(self.state.iteration, cfg.base_lr, cfg.max_iters, cfg.poly_power)?;
        let mut images = Vec::with_capacity(cfg.batch_size);
        let mut labels = Vec::with_capacity(cfg.batch_size * cfg.crop_size * cfg.crop_size);
        for _ in 0..cfg.batch_size {
            let i = self.next_index();
            let (img, lab) = augment(&self.data.images[i], &self.data.masks[i], cfg.crop_size, &cfg.augment, &mut self.rng);
            images.push(img);
            labels.extend(lab);
        }
        let refs: Vec<&Tensor> = images.iter().collect();
        let batch = stack(&refs);
        let mut g = Graph::new(&self.model.store);
        let x = g.input(batch);
        let logits = self.model.forward(&mut g, x)?;
        let ce = pixel_ce_loss(g.value(logits), &labels)?;
        if ce.all_ignored {
            self.state.empty_batches += 1;
        }
        let loss = g.custom_scalar(&[logits], ce.value, vec![ce.grad]);
        let grads = g.backward(loss);
        drop(g);
        self.optimizer.step(&mut self.model.store, &grads, lr);

        self.state.lr = lr;
        self.state.lr_history.push(lr);
        self.state.loss_history.push(ce.value);
        self.state.iteration += 1;
        if self.is_done() {
            let last = poly_lr(cfg.max_iters, cfg.base_lr, cfg.max_iters, cfg.poly_power)?;
            self.state.lr = last;
            self.state.lr_history.push(last);
        }
        self.refresh_checksums();
        Ok(ce.value)
    }

    pub fn run(&mut self) -> Result<&TrainState> {
        while !self.is_done() {
            self.step()?;
        }
        Ok(&self.state)
    }

    /// Weights plus optimizer momentum buffers.
    pub fn checkpoint(&self) -> Archive {
        self.model.checkpoint(self.optimizer.state())
    }

    pub fn restore_optimizer(&mut self, archive: &Archive) -> Result<()> {
        self.optimizer.load_state(archive.section(foodseg_nn::archive::OPTIMIZER)?)?;
        Ok(())
    }
}

/// Trains to `max_iters` and returns the final state and checkpoint.
pub fn train(model: Segmenter, data: SegDataset) -> Result<(Segmenter, TrainState, Archive)> {
    let mut t = Trainer::new(model, data)?;
    t.run()?;
    let ckpt = t.checkpoint();
    Ok((t.model, t.state, ckpt))
}
