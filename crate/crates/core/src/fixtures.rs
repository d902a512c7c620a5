//! Deterministic synthetic fixtures: small networks, corpora and stimulus tables.
//! Every builder is a pure function of its seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::detection::{ClassVocabulary, Detection};
use crate::engine::PredictionTable;
use crate::model::{GraphDef, Metadata, ModelGraph, Node, INPUT};
use crate::stats::{Condition, Stimulus, StimulusTable};
use crate::tensor::{BatchNorm2d, Conv2d, Layer, Linear, Pool2d, Tensor};

/// Channel of [`toy_chain`] whose activation is zero on every input.
pub const TOY_DEAD_FILTER: (&str, usize) = ("relu3", 5);
/// Channel of [`toy_chain`] with all-zero head weights.
pub const TOY_DISCONNECTED_FILTER: (&str, usize) = ("relu3", 4);
/// Input shape of [`toy_chain`].
pub const TOY_INPUT: [usize; 3] = [3, 16, 16];

struct Builder {
    rng: ChaCha8Rng,
    nodes: Vec<Node<f32>>,
}

impl Builder {
    fn new(seed: u64) -> Self {
        Self { rng: ChaCha8Rng::seed_from_u64(seed), nodes: Vec::new() }
    }

    fn uniform(&mut self, n: usize, bound: f32) -> Vec<f32> {
        (0..n).map(|_| self.rng.gen_range(-bound..bound)).collect()
    }

    fn push(&mut self, id: &str, layer: Layer<f32>, inputs: &[&str]) {
        self.nodes.push(Node::new(id, layer, inputs));
    }

    #[allow(clippy::too_many_arguments)]
    fn conv(&mut self, id: &str, input: &str, cin: usize, cout: usize, k: usize, stride: usize, padding: usize) {
        let bound = (6.0 / (cin * k * k) as f32).sqrt();
        let w = self.uniform(cout * cin * k * k, bound);
        let b = self.uniform(cout, 0.1);
        let weight = Tensor::new(vec![cout, cin, k, k], w).expect("finite weights");
        let conv = Conv2d::new(weight, Some(b), stride, padding).expect("valid conv");
        self.push(id, Layer::Conv2d(conv), &[input]);
    }

    fn linear(&mut self, id: &str, input: &str, fin: usize, fout: usize, gain: f32) {
        let bound = gain * (3.0 / fin as f32).sqrt();
        let w = self.uniform(fout * fin, bound);
        let b = self.uniform(fout, 0.1);
        let weight = Tensor::new(vec![fout, fin], w).expect("finite weights");
        self.push(id, Layer::Linear(Linear::new(weight, Some(b)).expect("valid linear")), &[input]);
    }

    fn conv_mut(&mut self, id: &str) -> &mut Conv2d<f32> {
        match self.nodes.iter_mut().find(|n| n.id == id).map(|n| &mut n.layer) {
            Some(Layer::Conv2d(c)) => c,
            _ => panic!("no conv node {id}"),
        }
    }

    fn linear_mut(&mut self, id: &str) -> &mut Linear<f32> {
        match self.nodes.iter_mut().find(|n| n.id == id).map(|n| &mut n.layer) {
            Some(Layer::Linear(l)) => l,
            _ => panic!("no linear node {id}"),
        }
    }

    fn finish(self, input_shape: [usize; 3], architecture: &str, seed: u64, targets: &[&str]) -> ModelGraph<f32> {
        let output = self.nodes.last().expect("non-empty graph").id.clone();
        ModelGraph::new(GraphDef {
            nodes: self.nodes,
            output,
            input_shape,
            metadata: Metadata {
                architecture: architecture.into(),
                seed: Some(seed),
                label_semantics: "probability of positive valence".into(),
                cut_point: None,
            },
            targets: targets.iter().map(|s| s.to_string()).collect(),
        })
        .expect("fixture graph is valid")
    }
}

fn pool(k: usize, s: usize, p: usize) -> Pool2d {
    Pool2d::new(k, s, p).expect("valid pool")
}

/// conv -> relu -> flatten -> linear -> sigmoid on a 1x4x4 input, with
/// hand-set weights: a single 3x3 conv channel and a head bias of 0.3.
pub fn minimal_net() -> ModelGraph<f32> {
    let kernel = Tensor::new(vec![1, 1, 3, 3], vec![0.5, -0.25, 0.0, 0.25, 1.0, 0.0, -0.5, 0.0, 0.75]).unwrap();
    let head = Tensor::new(vec![1, 4], vec![1.0, -0.5, 0.25, 2.0]).unwrap();
    let nodes = vec![
        Node::new("conv", Layer::Conv2d(Conv2d::new(kernel, Some(vec![0.1]), 1, 0).unwrap()), &[INPUT]),
        Node::new("relu", Layer::Relu, &["conv"]),
        Node::new("flatten", Layer::Flatten, &["relu"]),
        Node::new("head", Layer::Linear(Linear::new(head, Some(vec![0.3])).unwrap()), &["flatten"]),
        Node::new("output", Layer::Sigmoid, &["head"]),
    ];
    ModelGraph::new(GraphDef {
        nodes,
        output: "output".into(),
        input_shape: [1, 4, 4],
        metadata: Metadata {
            architecture: "minimal".into(),
            seed: None,
            label_semantics: "probability of positive valence".into(),
            cut_point: None,
        },
        targets: vec!["relu".into()],
    })
    .unwrap()
}

/// Three conv blocks (4, 6 and 6 filters) on a 3x16x16 input, then a linear head.
/// Targets are the three relu outputs. See [`TOY_DEAD_FILTER`] and
/// [`TOY_DISCONNECTED_FILTER`] for the two special channels.
pub fn toy_chain(seed: u64) -> ModelGraph<f32> {
    let mut b = Builder::new(seed);
    b.conv("conv1", INPUT, 3, 4, 3, 1, 1);
    b.push("relu1", Layer::Relu, &["conv1"]);
    b.push("pool1", Layer::MaxPool2d(pool(2, 2, 0)), &["relu1"]);
    b.conv("conv2", "pool1", 4, 6, 3, 1, 1);
    b.push("relu2", Layer::Relu, &["conv2"]);
    b.push("pool2", Layer::MaxPool2d(pool(2, 2, 0)), &["relu2"]);
    b.conv("conv3", "pool2", 6, 6, 3, 1, 1);
    b.push("relu3", Layer::Relu, &["conv3"]);
    b.push("flatten", Layer::Flatten, &["relu3"]);
    b.linear("head", "flatten", 6 * 4 * 4, 1, 1.0);
    b.push("output", Layer::Sigmoid, &["head"]);

    let (dead, disconnected) = (TOY_DEAD_FILTER.1, TOY_DISCONNECTED_FILTER.1);
    let conv3 = b.conv_mut("conv3");
    let per = conv3.weight.len() / 6;
    conv3.weight.data_mut()[dead * per..(dead + 1) * per].fill(0.0);
    conv3.bias.as_mut().unwrap()[dead] = -0.5;
    b.linear_mut("head").weight.data_mut()[disconnected * 16..(disconnected + 1) * 16].fill(0.0);
    b.finish(TOY_INPUT, "toy-chain", seed, &["relu1", "relu2", "relu3"])
}

/// A stem, one residual block and a strided batch-normalized stage on a 3x12x12 input.
/// `layer1` (the block output) dominates the output; nodes inside the block do not.
pub fn toy_residual(seed: u64) -> ModelGraph<f32> {
    let mut b = Builder::new(seed);
    b.conv("stem.conv", INPUT, 3, 4, 3, 1, 1);
    b.push("stem.relu", Layer::Relu, &["stem.conv"]);
    b.push("stem.maxpool", Layer::MaxPool2d(pool(2, 2, 0)), &["stem.relu"]);
    b.conv("layer1.conv1", "stem.maxpool", 4, 4, 3, 1, 1);
    b.push("layer1.relu1", Layer::Relu, &["layer1.conv1"]);
    b.conv("layer1.conv2", "layer1.relu1", 4, 4, 3, 1, 1);
    b.push("layer1.add", Layer::Add, &["layer1.conv2", "stem.maxpool"]);
    b.push("layer1", Layer::Relu, &["layer1.add"]);
    b.conv("layer2.conv", "layer1", 4, 6, 3, 2, 1);
    let scale = b.uniform(6, 0.5).into_iter().map(|s| 1.0 + s).collect();
    let shift = b.uniform(6, 0.2);
    b.push("layer2.bn", Layer::BatchNorm2d(BatchNorm2d::new(scale, shift).unwrap()), &["layer2.conv"]);
    b.push("layer2", Layer::Relu, &["layer2.bn"]);
    b.push("smooth", Layer::AvgPool2d(pool(3, 1, 1)), &["layer2"]);
    b.push("avgpool", Layer::AdaptiveAvgPool2d { out_h: 2, out_w: 2 }, &["smooth"]);
    b.push("flatten", Layer::Flatten, &["avgpool"]);
    b.linear("fc", "flatten", 6 * 2 * 2, 1, 2.0);
    b.push("output", Layer::Sigmoid, &["fc"]);
    b.finish([3, 12, 12], "toy-residual", seed, &["layer1", "layer2"])
}

/// Scaled-down AlexNet feature stack with the reference node naming
/// (`features.0` .. `features.12`) on a 3x64x64 input.
pub fn alexnet_like(seed: u64) -> ModelGraph<f32> {
    let mut b = Builder::new(seed);
    b.conv("features.0", INPUT, 3, 8, 5, 2, 2);
    b.push("features.1", Layer::Relu, &["features.0"]);
    b.push("features.2", Layer::MaxPool2d(pool(3, 2, 0)), &["features.1"]);
    b.conv("features.3", "features.2", 8, 12, 3, 1, 1);
    b.push("features.4", Layer::Relu, &["features.3"]);
    b.push("features.5", Layer::MaxPool2d(pool(3, 2, 0)), &["features.4"]);
    b.conv("features.6", "features.5", 12, 16, 3, 1, 1);
    b.push("features.7", Layer::Relu, &["features.6"]);
    b.conv("features.8", "features.7", 16, 16, 3, 1, 1);
    b.push("features.9", Layer::Relu, &["features.8"]);
    b.conv("features.10", "features.9", 16, 12, 3, 1, 1);
    b.push("features.11", Layer::Relu, &["features.10"]);
    b.push("features.12", Layer::MaxPool2d(pool(3, 2, 0)), &["features.11"]);
    b.push("avgpool", Layer::AdaptiveAvgPool2d { out_h: 2, out_w: 2 }, &["features.12"]);
    b.push("flatten", Layer::Flatten, &["avgpool"]);
    b.linear("classifier", "flatten", 12 * 2 * 2, 1, 2.0);
    b.push("output", Layer::Sigmoid, &["classifier"]);
    b.finish(
        [3, 64, 64],
        "alexnet-like",
        seed,
        &["features.1", "features.4", "features.7", "features.9", "features.11"],
    )
}

/// Image-like tensor: a smooth per-channel gradient plus uniform noise in [0, 1).
pub fn random_image(shape: [usize; 3], seed: u64) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let [c, h, w] = shape;
    let (gx, gy): (f32, f32) = (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
    let mut data = Vec::with_capacity(c * h * w);
    for ch in 0..c {
        let offset = ch as f32 * 0.1;
        for y in 0..h {
            for x in 0..w {
                let smooth = gx * x as f32 / w as f32 + gy * y as f32 / h as f32 + offset;
                data.push(0.5 * smooth + rng.gen::<f32>());
            }
        }
    }
    Tensor::new(shape.to_vec(), data).expect("finite image")
}

/// Ids of the synthetic stimuli, `stim_00` to `stim_47`.
pub fn stimulus_ids() -> Vec<String> {
    (0..48).map(|i| format!("stim_{i:02}")).collect()
}

/// A complete 48-row stimulus table. Conditions cycle through the four kinds;
/// true labels follow the condition, with image valence alternating on
/// incongruent stimuli. Decoder columns are noisy copies of the labels, noisier
/// for lower-level regions.
pub fn stimulus_table(seed: u64) -> StimulusTable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5354_494d);
    let rows = stimulus_ids()
        .into_iter()
        .enumerate()
        .map(|(i, image_id)| {
            let condition = Condition::ALL[i % 4];
            let (pv, sv) = match condition {
                Condition::PosPos => (1.0, 1.0),
                Condition::PosNeg => (1.0, 0.0),
                Condition::NegNeg => (0.0, 0.0),
                Condition::NegPos => (0.0, 1.0),
            };
            let iv = if condition.is_congruent() { pv } else { ((i / 4) % 2) as f64 };
            let truth = [iv, pv, sv];
            let mut decoded = [[0.0; 3]; 3];
            for (s, row) in decoded.iter_mut().enumerate() {
                let noise = 0.9 - 0.25 * s as f64;
                for (v, cell) in row.iter_mut().enumerate() {
                    *cell = 0.5 * truth[v] + rng.gen_range(-noise..noise);
                }
            }
            Stimulus { image_id, condition, congruent: condition.is_congruent(), truth, decoded }
        })
        .collect();
    StimulusTable::new(rows)
}

/// Model-like predictions for every stimulus: a squashed noisy image-valence label.
pub fn stimulus_predictions(table: &StimulusTable, seed: u64) -> PredictionTable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5052_4544);
    let rows = table
        .rows()
        .iter()
        .map(|s| {
            let z: f64 = 1.5 * (s.truth[0] - 0.5) + rng.gen_range(-1.5..1.5);
            (s.image_id.clone(), 1.0 / (1.0 + (-z).exp()))
        })
        .collect();
    PredictionTable::new(rows).expect("unique finite predictions")
}

/// One synthetic image per stimulus id.
pub fn stimulus_images(shape: [usize; 3], seed: u64) -> Vec<(String, Tensor<f32>)> {
    stimulus_ids()
        .into_iter()
        .enumerate()
        .map(|(i, id)| (id, random_image(shape, seed.wrapping_mul(1000).wrapping_add(i as u64))))
        .collect()
}

/// Random detections over `images` of size `image_w x image_h`, drawing class ids
/// from `pool`. Every box has positive area and confidence at least 0.25.
pub fn synthetic_detections(
    image_ids: &[String],
    vocab: &ClassVocabulary,
    pool: &[usize],
    (image_w, image_h): (f64, f64),
    per_image: usize,
    seed: u64,
) -> Vec<Detection> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x4445_5445);
    let mut out = Vec::new();
    for id in image_ids {
        for _ in 0..rng.gen_range(1..=per_image) {
            let class_id = pool[rng.gen_range(0..pool.len())];
            let w = rng.gen_range(0.1..0.8) * image_w;
            let h = rng.gen_range(0.1..0.8) * image_h;
            let x1 = rng.gen_range(0.0..image_w - w);
            let y1 = rng.gen_range(0.0..image_h - h);
            out.push(Detection {
                image_id: id.clone(),
                class_id,
                class_name: vocab.name(class_id).expect("class in range").to_string(),
                bbox: [x1, y1, x1 + w, y1 + h],
                confidence: rng.gen_range(0.25..1.0),
                image_w,
                image_h,
            });
        }
    }
    out
}
