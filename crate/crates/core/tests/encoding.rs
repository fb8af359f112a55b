use msan::autodiff::Graph;
use msan::corpus::{Corpus, FeatureSequence, Modality, VideoRecord};
use msan::encoder::{detect_semantics, encode_stream, layer_prefix, lstm_step, DetectorVars, StreamEncoderVars};
use msan::model::{ModelConfig, Net, StreamSpec};
use msan::params::ParamStore;
use msan::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn config(dims: &[(Modality, usize)], enc: usize) -> ModelConfig {
    ModelConfig {
        streams: dims
            .iter()
            .map(|&(modality, input_dim)| StreamSpec { modality, input_dim })
            .collect(),
        attribute_modalities: dims.iter().map(|d| d.0).collect(),
        enc_hidden: enc,
        det_hidden: 5,
        hidden: 4,
        factors: 3,
        embed_dim: 3,
        attn_dim: 4,
        num_attributes: 6,
        vocab_size: 7,
    }
}

fn sequence(rng: &mut ChaCha8Rng, steps: usize, dim: usize) -> FeatureSequence {
    FeatureSequence((0..steps).map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect())
}

fn encode(params: &ParamStore, m: Modality, seq: &FeatureSequence) -> Vec<f64> {
    let mut g = Graph::new();
    let vars = StreamEncoderVars::load(&mut g, params, m).unwrap();
    let v = encode_stream(&mut g, &vars, seq).unwrap();
    g.value(v).to_vec()
}

/// Two stacked `lstm_step` calls per frame from a zero state.
fn unroll(params: &ParamStore, m: Modality, seq: &FeatureSequence, n: usize) -> Vec<f64> {
    let (l1, l2) = (layer_prefix(m, 1), layer_prefix(m, 2));
    let (mut h1, mut c1, mut h2, mut c2) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    for x in seq.steps() {
        (h1, c1) = lstm_step(params, &l1, x, &h1, &c1).unwrap();
        (h2, c2) = lstm_step(params, &l2, &h1, &h2, &c2).unwrap();
    }
    h2
}

#[test]
fn single_frame_is_one_stacked_step() {
    let model = config(&[(Modality::Frames, 4)], 5);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let params = model.random_params(&mut rng, 0.5);
    let seq = sequence(&mut rng, 1, 4);
    assert_eq!(encode(&params, Modality::Frames, &seq), unroll(&params, Modality::Frames, &seq, 5));
}

#[test]
fn zero_parameters_encode_to_zero() {
    let model = config(&[(Modality::Clips, 3)], 4);
    let seq = sequence(&mut ChaCha8Rng::seed_from_u64(1), 6, 3);
    assert_eq!(encode(&model.zero_params(), Modality::Clips, &seq), vec![0.0; 4]);
}

#[test]
fn three_frames_match_manual_unroll() {
    let model = config(&[(Modality::Flow, 3)], 6);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let params = model.random_params(&mut rng, 0.8);
    let seq = sequence(&mut rng, 3, 3);
    let a = encode(&params, Modality::Flow, &seq);
    let b = unroll(&params, Modality::Flow, &seq, 6);
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() < 1e-14);
    }
}

fn record(rng: &mut ChaCha8Rng, dims: &[(Modality, usize)]) -> VideoRecord {
    VideoRecord {
        id: "v".into(),
        streams: dims.iter().map(|&(m, d)| (m, sequence(rng, 3, d))).collect(),
        captions: vec![vec!["a".into()]],
    }
}

#[test]
fn single_modality_video_is_its_stream() {
    let dims = [(Modality::Frames, 4)];
    let model = config(&dims, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let params = model.random_params(&mut rng, 0.5);
    let r = record(&mut rng, &dims);
    let (enc, _) = Net::new(&model, &params).analyze(&r).unwrap();
    assert_eq!(enc.video, encode(&params, Modality::Frames, &r.streams[&Modality::Frames]));
}

#[test]
fn three_streams_concatenate() {
    let dims = [(Modality::Frames, 5), (Modality::Clips, 6), (Modality::Flow, 7)];
    let model = config(&dims, 8);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let params = model.random_params(&mut rng, 0.5);
    let r = record(&mut rng, &dims);
    let (enc, sem) = Net::new(&model, &params).analyze(&r).unwrap();
    assert_eq!(enc.video.len(), 24);
    assert_eq!(sem.len(), 3);
    let parts: Vec<f64> = dims
        .iter()
        .flat_map(|&(m, _)| encode(&params, m, &r.streams[&m]))
        .collect();
    assert_eq!(enc.video, parts);
}

#[test]
fn stream_key_order_in_the_file_does_not_matter() {
    let a = r#"{"id":"x","streams":{"frames":[[1.0,2.0]],"clips":[[0.5,0.1]],"flow":[[-1.0,0.0]]},"captions":["a dog runs"]}"#;
    let b = r#"{"id":"x","streams":{"flow":[[-1.0,0.0]],"frames":[[1.0,2.0]],"clips":[[0.5,0.1]]},"captions":["a dog runs"]}"#;
    let ca = Corpus::from_jsonl(a).unwrap();
    let cb = Corpus::from_jsonl(b).unwrap();
    let model = config(&ca.stream_dims(), 4);
    let params = model.random_params(&mut ChaCha8Rng::seed_from_u64(6), 0.7);
    let net = Net::new(&model, &params);
    let (ea, _) = net.analyze(&ca.records[0]).unwrap();
    let (eb, _) = net.analyze(&cb.records[0]).unwrap();
    assert_eq!(ea.video, eb.video);
}

fn detector_store(w1: Vec<f64>, b1: Vec<f64>, w2: Vec<f64>, b2: Vec<f64>, d: usize, h: usize, k: usize) -> ParamStore {
    let mut s = ParamStore::new();
    s.insert("det.frames.w1", Tensor::matrix(h, d, w1).unwrap());
    s.insert("det.frames.b1", Tensor::vector(b1));
    s.insert("det.frames.w2", Tensor::matrix(k, h, w2).unwrap());
    s.insert("det.frames.b2", Tensor::vector(b2));
    s
}

fn detect(store: &ParamStore, v: &[f64]) -> Vec<f64> {
    let mut g = Graph::new();
    let det = DetectorVars::load(&mut g, store, Modality::Frames).unwrap();
    let x = g.input(v.to_vec());
    let s = detect_semantics(&mut g, &det, x);
    g.value(s).to_vec()
}

#[test]
fn zero_detector_gives_one_half() {
    let (d, h, k) = (3, 4, 5);
    let s = detector_store(vec![0.0; h * d], vec![0.0; h], vec![0.0; k * h], vec![0.0; k], d, h, k);
    assert_eq!(detect(&s, &[0.3, -2.0, 1.0]), vec![0.5; k]);
}

#[test]
fn saturated_logits_approach_one() {
    let (d, h, k) = (2, 2, 3);
    let s = detector_store(vec![0.0; h * d], vec![0.0; h], vec![0.0; k * h], vec![20.0; k], d, h, k);
    assert!(detect(&s, &[1.0, 1.0]).iter().all(|p| (1.0 - p) < 1e-6));
}

#[test]
fn detector_matches_composed_oracle() {
    let (d, h, k) = (4, 3, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect() };
    let (w1, b1, w2, b2, v) = (draw(h * d), draw(h), draw(k * h), draw(k), draw(d));
    let s = detector_store(w1.clone(), b1.clone(), w2.clone(), b2.clone(), d, h, k);
    let hidden: Vec<f64> = (0..h)
        .map(|i| ((0..d).map(|j| w1[i * d + j] * v[j]).sum::<f64>() + b1[i]).tanh())
        .collect();
    let expected: Vec<f64> = (0..k)
        .map(|i| {
            let z = (0..h).map(|j| w2[i * h + j] * hidden[j]).sum::<f64>() + b2[i];
            1.0 / (1.0 + (-z).exp())
        })
        .collect();
    for (a, b) in detect(&s, &v).iter().zip(&expected) {
        assert!((a - b).abs() < 1e-14);
    }
}
