//! Residual CNN branch: 7×7/2 stem with 3×3/2 max-pool, then three (or four)
//! stages of basic two-conv residual blocks at widths C′, 2C′, 4C′ (8C′),
//! matching the ViT branch's 1/4, 1/8, 1/16 (1/32) grid stage for stage.

use crate::config::Resolved;
use crate::error::Result;
use crate::init::Rng;
use crate::layers::{BatchNorm2d, Conv2d, Init, Mode};
use crate::ops;
use crate::params::ParamSet;
use crate::tape::Tape;
use crate::tensor::{Scalar, Tensor};

pub struct Stem<T: Scalar> {
    pub conv: Conv2d<T>,
    pub bn: BatchNorm2d<T>,
}

impl<T: Scalar> Stem<T> {
    pub fn new(rng: &mut Rng, width: usize) -> Self {
        Self {
            conv: Conv2d::new(rng, 3, width, (7, 7), (2, 2), (3, 3), false, Init::KaimingFanOut),
            bn: BatchNorm2d::new(width),
        }
    }

    pub fn forward(&self, tape: &Tape<T>, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let y = self.conv.forward(tape, x)?;
        let y = self.bn.forward(tape, &y, mode)?;
        let y = ops::relu(tape, &y)?;
        ops::max_pool2d(tape, &y, (3, 3), (2, 2), (1, 1))
    }

    pub fn collect(&self, prefix: &str, params: &mut ParamSet<T>, buffers: &mut ParamSet<T>) {
        self.conv.collect(&format!("{prefix}.conv"), params);
        self.bn.collect(&format!("{prefix}.bn"), params, buffers);
    }
}

/// Two 3×3 convs with BN/ReLU and an identity (or 1×1-projected) shortcut.
pub struct BasicBlock<T: Scalar> {
    pub conv1: Conv2d<T>,
    pub bn1: BatchNorm2d<T>,
    pub conv2: Conv2d<T>,
    pub bn2: BatchNorm2d<T>,
    pub shortcut: Option<(Conv2d<T>, BatchNorm2d<T>)>,
}

impl<T: Scalar> BasicBlock<T> {
    pub fn new(rng: &mut Rng, cin: usize, cout: usize, stride: usize) -> Self {
        let shortcut = (stride != 1 || cin != cout).then(|| {
            (
                Conv2d::new(rng, cin, cout, (1, 1), (stride, stride), (0, 0), false, Init::KaimingFanOut),
                BatchNorm2d::new(cout),
            )
        });
        Self {
            conv1: Conv2d::new(rng, cin, cout, (3, 3), (stride, stride), (1, 1), false, Init::KaimingFanOut),
            bn1: BatchNorm2d::new(cout),
            conv2: Conv2d::new(rng, cout, cout, (3, 3), (1, 1), (1, 1), false, Init::KaimingFanOut),
            bn2: BatchNorm2d::new(cout),
            shortcut,
        }
    }

    pub fn forward(&self, tape: &Tape<T>, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let main = self.conv1.forward(tape, x)?;
        let main = ops::relu(tape, &self.bn1.forward(tape, &main, mode)?)?;
        let main = self.conv2.forward(tape, &main)?;
        let main = self.bn2.forward(tape, &main, mode)?;
        let residual = match &self.shortcut {
            Some((conv, bn)) => bn.forward(tape, &conv.forward(tape, x)?, mode)?,
            None => x.clone(),
        };
        ops::relu(tape, &ops::add(tape, &main, &residual)?)
    }

    pub fn collect(&self, prefix: &str, params: &mut ParamSet<T>, buffers: &mut ParamSet<T>) {
        self.conv1.collect(&format!("{prefix}.conv1"), params);
        self.bn1.collect(&format!("{prefix}.bn1"), params, buffers);
        self.conv2.collect(&format!("{prefix}.conv2"), params);
        self.bn2.collect(&format!("{prefix}.bn2"), params, buffers);
        if let Some((conv, bn)) = &self.shortcut {
            conv.collect(&format!("{prefix}.shortcut.conv"), params);
            bn.collect(&format!("{prefix}.shortcut.bn"), params, buffers);
        }
    }
}

pub struct CnnBranch<T: Scalar> {
    pub stem: Stem<T>,
    pub stages: Vec<Vec<BasicBlock<T>>>,
}

impl<T: Scalar> CnnBranch<T> {
    pub fn new(rng: &mut Rng, r: &Resolved) -> Self {
        let stem = Stem::new(rng, r.cnn_widths[0]);
        let mut stages = Vec::with_capacity(r.stages);
        let mut cin = r.cnn_widths[0];
        for i in 0..r.stages {
            let cout = r.cnn_widths[i];
            let mut blocks = Vec::with_capacity(r.blocks[i]);
            for k in 0..r.blocks[i] {
                // the stem already lands at 1/4, so stage 1 keeps stride 1
                let stride = if k == 0 && i > 0 { 2 } else { 1 };
                blocks.push(BasicBlock::new(rng, cin, cout, stride));
                cin = cout;
            }
            stages.push(blocks);
        }
        Self { stem, stages }
    }

    /// Feature maps per stage, shallow → deep.
    pub fn forward(&self, tape: &Tape<T>, x: &Tensor<T>, mode: Mode) -> Result<Vec<Tensor<T>>> {
        let mut cur = self.stem.forward(tape, x, mode)?;
        let mut maps = Vec::with_capacity(self.stages.len());
        for blocks in &self.stages {
            for block in blocks {
                cur = block.forward(tape, &cur, mode)?;
            }
            maps.push(cur.clone());
        }
        Ok(maps)
    }

    pub fn collect(&self, params: &mut ParamSet<T>, buffers: &mut ParamSet<T>) {
        self.stem.collect("cnn.stem", params, buffers);
        for (i, blocks) in self.stages.iter().enumerate() {
            for (k, block) in blocks.iter().enumerate() {
                block.collect(&format!("cnn.stage{}.block{}", i + 1, k + 1), params, buffers);
            }
        }
    }
}
