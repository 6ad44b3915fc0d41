use mutabnet::data::{encode_sample, generate_synthetic_table, SeqLimits, SynthConfig, Vocabs};
use mutabnet::losses::LossWeights;
use mutabnet::model::*;
use mutabnet::nn::{grid_encoding, seeded_rng, ParamStore};
use mutabnet::teds::{parse_html_tree, teds_score, TreeMode};
use mutabnet::tokenizer::{EOS, SEP, SOS};
use mutabnet::train::{ground_truth_html, sample_loss, train, TrainConfig, TrainItem};
use mutabnet::Error;
use mutabnet_autodiff::{grad_check_many, Tensor};
use rand::Rng;

fn small_config(sv: usize, cv: usize) -> ModelConfig {
    let mut c = ModelConfig::tiny(sv, cv);
    c.d = 16;
    c.heads = 2;
    c.ffn_mult = 2;
    c.backbone.stem = 4;
    c.backbone.channels = vec![4, 8, 8, 16];
    c
}

fn random_image(rng: &mut impl Rng, s: usize) -> Tensor {
    Tensor::new((0..s * s).map(|_| rng.gen_range(0.0..1.0)).collect(), &[1, s, s]).unwrap()
}

fn random_ids(rng: &mut impl Rng, len: usize, vocab: usize) -> Vec<usize> {
    let mut v = vec![SOS];
    v.extend((1..len).map(|_| rng.gen_range(4..vocab)));
    v
}

fn setup(seed: u64, cfg: ModelConfig) -> (Model, ParamStore, ImageContext) {
    let (model, params) = Model::new(cfg, seed).unwrap();
    let mut rng = seeded_rng(seed + 100);
    let img = random_image(&mut rng, model.config.image_size);
    let ctx = model.encode(&params, &img).unwrap();
    (model, params, ctx)
}

#[test]
fn presets_validate() {
    ModelConfig::tiny(20, 30).validate().unwrap();
    ModelConfig::full(20, 30).validate().unwrap();
    assert_eq!(BackboneConfig::full().output_side(520), 65);
    assert_eq!(BackboneConfig::tiny().output_side(64), 8);
    assert_eq!("tiny".parse::<Preset>().unwrap(), Preset::Tiny);
    assert!("huge".parse::<Preset>().is_err());
    let mut c = ModelConfig::tiny(20, 30);
    c.heads = 3;
    assert!(c.validate().is_err());
    let mut c = ModelConfig::tiny(20, 30);
    c.d = 18;
    c.heads = 2;
    assert!(c.validate().is_err());
    let mut c = ModelConfig::tiny(20, 30);
    c.html_window = 0;
    assert!(c.validate().is_err());
    let mut c = ModelConfig::tiny(20, 30);
    c.max_cell_len = 1;
    assert!(c.validate().is_err());
}

#[test]
fn tiny_memory_is_8x8() {
    let (model, _, ctx) = setup(1, ModelConfig::tiny(12, 20));
    assert_eq!((ctx.encoded.height, ctx.encoded.width), (8, 8));
    assert_eq!(ctx.encoded.memory.shape(), &[64, model.config.d]);
}

#[test]
fn full_resolution_memory_is_65x65() {
    // Full-size input and strides with narrow channels to keep the test light.
    let mut c = ModelConfig::full(12, 20);
    c.d = 8;
    c.heads = 2;
    c.backbone.stem = 2;
    c.backbone.channels = vec![2, 2, 4, 8];
    c.backbone.blocks = vec![1, 1, 1, 1];
    c.backbone.gca_ratio = 2;
    let (_, _, ctx) = setup(2, c);
    assert_eq!((ctx.encoded.height, ctx.encoded.width), (65, 65));
    assert_eq!(ctx.encoded.memory.dim(0), 4225);
}

#[test]
fn wrong_image_size_rejected() {
    let (model, params) = Model::new(small_config(12, 20), 3).unwrap();
    assert!(model.encode(&params, &Tensor::zeros(&[1, 32, 32])).is_err());
}

#[test]
fn zero_encoder_gives_pure_position_encoding() {
    let (model, mut params) = Model::new(ModelConfig::tiny(12, 20), 4).unwrap();
    let ids: Vec<_> = params.ids().collect();
    for id in ids {
        if params.name(id).starts_with("encoder.") {
            let n = params.get(id).numel();
            params.set(id, vec![0.0; n]);
        }
    }
    let ctx = model.encode(&params, &Tensor::zeros(&[1, 64, 64])).unwrap();
    assert_eq!(ctx.encoded.memory.data(), grid_encoding(8, 8, model.config.d).unwrap().data());
}

#[test]
fn decoder_output_shapes_and_bbox_range() {
    let (model, params, ctx) = setup(5, small_config(14, 22));
    let mut rng = seeded_rng(5);
    let ids = random_ids(&mut rng, 11, 14);
    let out = model.html.forward(&params, &ids, Direction::LtoR, &ctx.html).unwrap();
    assert_eq!(out.token_logits.shape(), &[11, 14]);
    assert_eq!(out.hidden.shape(), &[11, 16]);
    assert_eq!(out.bbox_pred.shape(), &[11, 4]);
    assert!(out.bbox_pred.data().iter().all(|&b| (0.0..=1.0).contains(&b)));
    let cells = vec![SOS, 5, 6, SEP, 7, SEP, 8];
    let logits = model.cell.forward(&params, &cells, &out.hidden, &[1, 4, 6], &ctx.cell).unwrap();
    assert_eq!(logits.shape(), &[7, 22]);
}

#[test]
fn structure_decoder_is_causal() {
    let mut rng = seeded_rng(6);
    for trial in 0..10 {
        let (model, params, ctx) = setup(10 + trial, small_config(14, 22));
        let len = rng.gen_range(2..20);
        let ids = random_ids(&mut rng, len, 14);
        let t = rng.gen_range(1..len);
        let mut changed = ids.clone();
        changed[t] = 4 + (changed[t] - 4 + 1) % 10;
        for dir in [Direction::LtoR, Direction::RtoL] {
            let a = model.html.forward(&params, &ids, dir, &ctx.html).unwrap();
            let b = model.html.forward(&params, &changed, dir, &ctx.html).unwrap();
            let v = 14;
            assert_eq!(a.token_logits.data()[..t * v], b.token_logits.data()[..t * v]);
            assert_eq!(a.bbox_pred.data()[..t * 4], b.bbox_pred.data()[..t * 4]);
            assert_ne!(a.token_logits.data()[t * v..], b.token_logits.data()[t * v..]);
        }
    }
}

#[test]
fn structure_decoder_window_bounds_receptive_field() {
    let mut rng = seeded_rng(7);
    for w in [1usize, 2, 3] {
        let mut cfg = small_config(14, 22);
        cfg.html_window = w;
        let (model, params, ctx) = setup(20 + w as u64, cfg);
        let len = 24;
        let ids = random_ids(&mut rng, len, 14);
        // Three blocks reach back at most 3w positions.
        for s in 1..len {
            let mut changed = ids.clone();
            changed[s] = 4 + (changed[s] - 4 + 3) % 10;
            let a = model.html.forward(&params, &ids, Direction::LtoR, &ctx.html).unwrap();
            let b = model.html.forward(&params, &changed, Direction::LtoR, &ctx.html).unwrap();
            for t in 0..len {
                let same = a.token_logits.row(t) == b.token_logits.row(t);
                if t < s || t > s + 3 * w {
                    assert!(same, "w={w} perturb {s} affected {t}");
                } else if t == s {
                    assert!(!same);
                }
            }
        }
    }
}

#[test]
fn direction_flag_changes_logits() {
    let (model, params, ctx) = setup(8, small_config(14, 22));
    let ids = vec![SOS, 5, 6, 7];
    let a = model.html.forward(&params, &ids, Direction::LtoR, &ctx.html).unwrap();
    let b = model.html.forward(&params, &ids, Direction::RtoL, &ctx.html).unwrap();
    assert_ne!(a.token_logits.data(), b.token_logits.data());
}

#[test]
fn html_features_reach_cell_decoder() {
    let (model, params, ctx) = setup(9, small_config(14, 22));
    let ids = vec![SOS, 5, 6, 7, 8];
    let out = model.html.forward(&params, &ids, Direction::LtoR, &ctx.html).unwrap();
    let cells = vec![SOS, 5, 6, SEP, 7];
    let a = model.cell.forward(&params, &cells, &out.hidden, &[1, 3], &ctx.cell).unwrap();
    let zero = Tensor::zeros(out.hidden.shape());
    let b = model.cell.forward(&params, &cells, &zero, &[1, 3], &ctx.cell).unwrap();
    assert_ne!(a.data(), b.data());
}

#[test]
fn injection_rows_follow_separators() {
    let inputs = [SOS, 5, 6, SEP, 7, SEP, SEP, 8];
    let rows = injection_rows(&inputs, &[2, 5, 9], 11).unwrap();
    assert_eq!(rows, vec![3, 3, 3, 6, 6, 10, 10, 10]);
    assert!(matches!(injection_rows(&inputs, &[2, 10], 11), Err(Error::Alignment { .. })));
}

#[test]
fn cell_decoder_is_causal_across_cells() {
    let mut rng = seeded_rng(10);
    let (model, params, ctx) = setup(11, small_config(14, 22));
    let ids = vec![SOS, 5, 6, 7, 8, 9, 10];
    let out = model.html.forward(&params, &ids, Direction::LtoR, &ctx.html).unwrap();
    for _ in 0..20 {
        let cells: Vec<Vec<usize>> = (0..3).map(|_| (0..rng.gen_range(0..4)).map(|_| rng.gen_range(4..22)).collect()).collect();
        let join = |cells: &[Vec<usize>]| {
            let mut v = vec![SOS];
            for (i, c) in cells.iter().enumerate() {
                if i > 0 {
                    v.push(SEP);
                }
                v.extend(c);
            }
            v
        };
        let a_in = join(&cells);
        let mut perturbed = cells.clone();
        perturbed[2] = vec![4, 5, 6];
        let b_in = join(&perturbed);
        let a = model.cell.forward(&params, &a_in, &out.hidden, &[1, 3, 5], &ctx.cell).unwrap();
        let b = model.cell.forward(&params, &b_in, &out.hidden, &[1, 3, 5], &ctx.cell).unwrap();
        // Everything up to and including the separator before cell 2.
        let prefix = 1 + cells[0].len() + 1 + cells[1].len();
        assert_eq!(a.data()[..prefix * 22], b.data()[..prefix * 22]);
    }
}

#[test]
fn initialization_is_deterministic() {
    let (_, a) = Model::new(ModelConfig::tiny(12, 20), 42).unwrap();
    let (_, b) = Model::new(ModelConfig::tiny(12, 20), 42).unwrap();
    let (_, c) = Model::new(ModelConfig::tiny(12, 20), 43).unwrap();
    assert_eq!(a.num_scalars(), b.num_scalars());
    assert!(a.tensors().iter().zip(b.tensors()).all(|(x, y)| x.data() == y.data()));
    assert!(a.tensors().iter().zip(c.tensors()).any(|(x, y)| x.data() != y.data()));
}

fn synth_setup(seed: u64) -> (mutabnet::data::TableSample, Vocabs, TrainItem, mutabnet::data::EncodedSample) {
    let cfg = SynthConfig::default();
    let sample = generate_synthetic_table(seed, 3, 3, &cfg).unwrap();
    let vocabs = Vocabs::build(std::slice::from_ref(&sample), vec![]).unwrap();
    let enc = encode_sample(&sample, &vocabs, 64, false).unwrap();
    let limits = SeqLimits {
        max_structure_len: 100,
        max_cell_len: 200,
    };
    let item = TrainItem::from_samples(std::slice::from_ref(&enc), limits).remove(0);
    (sample, vocabs, item, enc)
}

/// Tiny-preset model with every bias shifted off zero. Zero biases on a
/// blank image background put many ReLU inputs exactly on the kink, where
/// finite differences are meaningless.
fn generic_point_model(sv: usize, cv: usize) -> (Model, ParamStore) {
    let (model, mut params) = Model::new(ModelConfig::tiny(sv, cv), 12).unwrap();
    let mut rng = seeded_rng(5);
    let ids: Vec<_> = params.ids().collect();
    for id in ids {
        if params.name(id).ends_with(".bias") {
            let v: Vec<f64> = params.get(id).data().iter().map(|x| x + rng.gen_range(-0.1..0.1)).collect();
            params.set(id, v);
        }
    }
    (model, params)
}

#[test]
fn full_model_gradient_check() {
    let (_, vocabs, item, _) = synth_setup(3);
    let (model, params) = generic_point_model(vocabs.structure.len(), vocabs.cells.len());
    // KL teachers are detached on purpose, so finite differences only agree
    // with the analytic gradient when the KL weight is zero.
    let w = LossWeights {
        w_kl: 0.0,
        ..LossWeights::default()
    };
    let err = grad_check_many(
        |ts| {
            let p = params.with_tensors(ts.to_vec());
            Ok(sample_loss(&model, &p, &item, &w, true).unwrap().0)
        },
        params.tensors(),
        1e-6,
        Some(3),
    )
    .unwrap();
    assert!(err < 1e-4, "max relative error {err}");
}

#[test]
fn greedy_stops_at_immediate_eos() {
    let (model, mut params, ctx) = setup(13, small_config(14, 22));
    let w = params.find("html.token_head.weight").unwrap();
    let b = params.find("html.token_head.bias").unwrap();
    let n = params.get(w).numel();
    params.set(w, vec![0.0; n]);
    let mut bias = vec![0.0; 14];
    bias[EOS] = 5.0;
    params.set(b, bias);
    let ctx2 = model.encode(&params, &Tensor::zeros(&[1, 64, 64])).unwrap();
    let mut vocab = mutabnet::tokenizer::TokenVocab::new();
    for i in 4..14 {
        vocab.lookup(&format!("<t{i}>"), mutabnet::tokenizer::VocabMode::Build).unwrap();
    }
    let st = greedy_decode_structure(&model, &params, &ctx2, &vocab).unwrap();
    assert!(st.ids.is_empty() && st.finished && st.cell_positions.is_empty());
    drop(ctx);
}

#[test]
fn greedy_respects_caps_and_cell_count() {
    let mut cfg = small_config(14, 22);
    cfg.max_structure_len = 6;
    cfg.max_cell_len = 5;
    let (model, mut params, _) = setup(14, cfg);
    // Never emit EOS or SEP so both decoders run into their caps.
    for (name, banned) in [("html.token_head.bias", vec![EOS]), ("cell.head.bias", vec![EOS, SEP])] {
        let id = params.find(name).unwrap();
        let mut b = params.get(id).to_vec();
        for k in banned {
            b[k] = -1e3;
        }
        params.set(id, b);
    }
    let ctx = model.encode(&params, &Tensor::zeros(&[1, 64, 64])).unwrap();
    let mut vocab = mutabnet::tokenizer::TokenVocab::new();
    for i in 4..14 {
        vocab.lookup(if i % 2 == 0 { "<td></td>" } else { "<tr>" }, mutabnet::tokenizer::VocabMode::Build).ok();
        vocab.lookup(&format!("<x{i}>"), mutabnet::tokenizer::VocabMode::Build).unwrap();
    }
    let st = greedy_decode_structure(&model, &params, &ctx, &vocab).unwrap();
    assert!(st.ids.len() < 6);
    assert!(!st.finished);
    assert_eq!(st.hidden.dim(0), st.ids.len() + 1);

    let positions = [0usize, 1, 2, 3];
    let cells = greedy_decode_cells(&model, &params, &ctx, &st.hidden, &positions).unwrap();
    assert_eq!(cells.len(), 4);
    assert_eq!(cells.iter().map(Vec::len).sum::<usize>(), 4);
    assert!(greedy_decode_cells(&model, &params, &ctx, &st.hidden, &[]).unwrap().is_empty());
}

#[test]
fn assemble_examples() {
    assert_eq!(
        assemble_html(&["<tr>", "<td></td>", "</tr>"], &["x"], false).unwrap(),
        "<html><body><table><tr><td>x</td></tr></table></body></html>"
    );
    assert_eq!(
        assemble_html(&["<tr>", "<td></td>", "</tr>"], &[""], false).unwrap(),
        "<html><body><table><tr><td></td></tr></table></body></html>"
    );
    assert!(assemble_html(&["<tr>", "<td></td>", "</tr>"], &["a", "b"], false).is_err());
}

#[test]
fn ground_truth_assembly_scores_one_against_itself() {
    for seed in 0..10 {
        let (sample, vocabs, _, enc) = synth_setup(seed);
        let structure = vocabs.structure.decode(&enc.structure.ids).unwrap();
        let cells: Vec<String> = mutabnet::tokenizer::split_cell_ids(&enc.cells.ids)
            .iter()
            .map(|ids| vocabs.cells.decode(ids).unwrap().concat())
            .collect();
        let html = assemble_html(&structure, &cells, vocabs.bold.applies).unwrap();
        let gt = ground_truth_html(&sample).unwrap();
        assert_eq!(html, gt);
        for mode in [TreeMode::Structural, TreeMode::Total] {
            let a = parse_html_tree(&html, mode).unwrap();
            let b = parse_html_tree(&gt, mode).unwrap();
            assert_eq!(teds_score(&a, &b), 1.0);
        }
    }
}

#[test]
fn overfits_one_sample_and_survives_checkpoint() {
    let (sample, vocabs, item, enc) = synth_setup(21);
    let mut cfg = ModelConfig::tiny(vocabs.structure.len(), vocabs.cells.len());
    cfg.d = 32;
    let (model, mut params) = Model::new(cfg, 3).unwrap();
    let tc = TrainConfig {
        epochs: 150,
        batch_size: 1,
        checkpoint_every_epoch: false,
        ..TrainConfig::default()
    };
    let summary = train(&model, &mut params, std::slice::from_ref(&item), &tc, None).unwrap();
    assert_eq!(summary.steps, 150);
    let first = summary.records[0].losses.total;
    let last = summary.records.last().unwrap().losses.total;
    assert!(last < first * 0.1, "{first} -> {last}");

    let rec = recognize(&model, &params, &enc.image, &vocabs).unwrap();
    assert_eq!(vocabs.structure.decode(&enc.structure.ids).unwrap(), rec.structure);
    assert_eq!(rec.html, ground_truth_html(&sample).unwrap());
    assert!(rec.bboxes.iter().all(|b| b.iter().all(|v| (0.0..=1.0).contains(v))));

    let dir = tempfile::tempdir().unwrap();
    save_model(dir.path(), &model, &params, &vocabs, toml::Table::new()).unwrap();
    let loaded = load_model(dir.path()).unwrap();
    assert_eq!(loaded.model.config, model.config);
    assert_eq!(loaded.vocabs, vocabs);
    let again = recognize(&loaded.model, &loaded.params, &enc.image, &loaded.vocabs).unwrap();
    assert_eq!(again.html, rec.html);
    assert_eq!(again.bboxes, rec.bboxes);
}
