use std::fs;

use convsurgeon::fixture::{random_cnn, random_corpus, smallcnn, to_nhwc, SmallCnnOptions};
use convsurgeon::interpreter::{execute, export_trace, import_trace, OpKind};
use convsurgeon::nmif::{
    canonicalize_layout, decode_nt, encode_nt, load_model, read_nt, save_model, validate_model, AttrValue, DType, Layout, NmifError, TensorData,
    NCHW_FROM_NHWC,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

const NHWC_FROM_NCHW: [usize; 4] = [0, 2, 3, 1];

fn input_for(model: &convsurgeon::nmif::ModelGraph, seed: u64) -> TensorData {
    random_corpus(seed, &model.inputs[0].shape, 1).remove(0).tensor
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn save_load_save_is_byte_identical(seed in any::<u64>()) {
        let model = random_cnn(seed);
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a.nmif"), dir.path().join("b.nmif"));
        save_model(&model, &a).unwrap();
        let loaded = load_model(&a).unwrap();
        prop_assert!(loaded.structurally_eq(&model));
        save_model(&loaded, &b).unwrap();
        for file in ["manifest.json", "tensors.bin"] {
            prop_assert_eq!(fs::read(a.join(file)).unwrap(), fs::read(b.join(file)).unwrap());
        }
    }

    #[test]
    fn nt_round_trip(shape in prop::collection::vec(0usize..5, 0..5), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n: usize = shape.iter().product();
        let t = TensorData::from_f32(shape.clone(), (0..n).map(|_| rng.random_range(-1e3f32..1e3)).collect()).unwrap();
        let back = decode_nt(&encode_nt(&t), false).unwrap();
        prop_assert_eq!(back.shape(), t.shape());
        prop_assert!(back.values().bit_eq(t.values()));
        let i = TensorData::from_i64(shape, (0..n as i64).map(|v| v * -7).collect()).unwrap();
        let back = decode_nt(&encode_nt(&i), false).unwrap();
        prop_assert!(back.values().bit_eq(i.values()));
    }

    /// Running the NHWC form on the permuted input gives the NCHW activations,
    /// permuted, bit for bit.
    #[test]
    fn layout_commutes_with_inference(seed in any::<u64>()) {
        let model = random_cnn(seed);
        let nhwc = to_nhwc(&model).unwrap();
        prop_assert!(validate_model(&nhwc).is_empty());
        prop_assert!(canonicalize_layout(&nhwc).unwrap().structurally_eq(&model));

        let x = input_for(&model, seed);
        let a = execute(&model, "x", &x, true, 5).unwrap();
        let b = execute(&nhwc, "x", &x.permuted(&NHWC_FROM_NCHW), true, 5).unwrap();
        prop_assert_eq!(&a.top_k, &b.top_k);
        for (ea, eb) in a.entries.iter().zip(&b.entries) {
            prop_assert_eq!(&ea.node_id, &eb.node_id);
            let eb = if eb.tensor.rank() == 4 { eb.tensor.permuted(&NCHW_FROM_NHWC) } else { eb.tensor.clone() };
            prop_assert_eq!(ea.tensor.shape(), eb.shape());
            prop_assert!(ea.tensor.values().bit_eq(eb.values()), "node {}", ea.node_id);
        }
    }
}

fn mutate(model: &mut convsurgeon::nmif::ModelGraph, rng: &mut ChaCha8Rng) {
    let values: Vec<String> = model
        .inputs
        .iter()
        .map(|v| v.name.clone())
        .chain(model.nodes.iter().flat_map(|n| n.outputs.clone()))
        .chain(model.initializers.keys().cloned())
        .collect();
    let ni = rng.random_range(0..model.nodes.len());
    match rng.random_range(0..9) {
        0 => {
            let node = &mut model.nodes[ni];
            let keys: Vec<String> = node.attrs.keys().cloned().collect();
            if let Some(key) = keys.get(rng.random_range(0..keys.len().max(1))) {
                let value = match &node.attrs[key] {
                    AttrValue::Ints(v) => AttrValue::Ints(v.iter().map(|_| rng.random_range(-1..6)).collect()),
                    AttrValue::Int(_) => AttrValue::Int(rng.random_range(-1..6)),
                    _ => AttrValue::Float(rng.random_range(-1.0..1.0)),
                };
                node.attrs.insert(key.clone(), value);
            }
        }
        1 => {
            let node = &mut model.nodes[ni];
            let slot = rng.random_range(0..node.inputs.len());
            node.inputs[slot] = values[rng.random_range(0..values.len())].clone();
        }
        2 => model.nodes[ni].inputs.push("nowhere".into()),
        3 => {
            model.nodes.remove(ni);
        }
        4 => {
            let ops = convsurgeon::interpreter::ops::ALL_OPS;
            model.nodes[ni].op_type = ops[rng.random_range(0..ops.len())];
        }
        5 => {
            let keys: Vec<String> = model.initializers.keys().cloned().collect();
            if let Some(key) = keys.get(rng.random_range(0..keys.len().max(1))) {
                let shape: Vec<usize> = (0..rng.random_range(1..=4)).map(|_| rng.random_range(1..4)).collect();
                let n = shape.iter().product();
                model.initializers.insert(key.clone(), TensorData::from_f32(shape, vec![0.5; n]).unwrap());
            }
        }
        6 => {
            let dims = &mut model.inputs[0].shape;
            let axis = rng.random_range(0..dims.len());
            dims[axis] = rng.random_range(1..10);
        }
        7 => {
            let j = rng.random_range(0..model.nodes.len());
            model.nodes.swap(ni, j);
        }
        _ => {
            let shape = &mut model.outputs[0].shape;
            if let Some(d) = shape.last_mut() {
                *d += 1;
            }
        }
    }
}

/// Mutated graphs either fail validation or execute without error.
#[test]
fn validation_is_sound_under_mutation() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let (mut accepted, mut rejected) = (0, 0);
    for case in 0..600u64 {
        let mut model = random_cnn(case);
        for _ in 0..rng.random_range(1..=3) {
            if model.nodes.is_empty() {
                break;
            }
            mutate(&mut model, &mut rng);
        }
        if model.nodes.is_empty() || !validate_model(&model).is_empty() {
            rejected += 1;
            continue;
        }
        accepted += 1;
        let x = input_for(&model, case);
        execute(&model, "x", &x, true, 5).unwrap_or_else(|e| panic!("case {case} validated but failed: {e}"));
    }
    assert!(accepted > 50 && rejected > 50, "accepted {accepted}, rejected {rejected}");
}

/// A container assembled by hand, as an external exporter would write it.
#[test]
fn hand_written_container_loads() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("tiny.nmif");
    fs::create_dir_all(&path).unwrap();
    let weight: [f32; 4] = [1.0, -2.0, 0.5, 4.0];
    let bias: [f32; 2] = [0.25, -0.25];
    let mut blob = Vec::new();
    blob.extend(weight.iter().flat_map(|v| v.to_le_bytes()));
    blob.resize(64, 0);
    blob.extend(bias.iter().flat_map(|v| v.to_le_bytes()));
    let manifest = json!({
        "format_version": 1,
        "name": "tiny",
        "layout": "NCHW",
        "inputs": [{"name": "x", "dtype": "F32", "shape": [1, 2]}],
        "outputs": [{"name": "z", "dtype": "F32", "shape": [1, 2]}],
        "nodes": [
            {"id": "fc", "op_type": "Dense", "attrs": {}, "inputs": ["x", "fc.w"], "outputs": ["y"]},
            {"id": "fc_bias", "op_type": "BiasAdd", "attrs": {}, "inputs": ["y", "fc.b"], "outputs": ["z"]}
        ],
        "initializers": [
            {"name": "fc.w", "dtype": "F32", "shape": [2, 2], "offset": 0, "byte_length": 16},
            {"name": "fc.b", "dtype": "F32", "shape": [2], "offset": 64, "byte_length": 8}
        ]
    });
    fs::write(path.join("manifest.json"), serde_json::to_string(&manifest).unwrap()).unwrap();
    fs::write(path.join("tensors.bin"), &blob).unwrap();

    let model = load_model(&path).unwrap();
    assert_eq!(model.nodes[0].op_type, OpKind::Dense);
    assert_eq!(model.initializers["fc.b"].as_f32().unwrap(), &bias);
    let x = TensorData::from_f32(vec![1, 2], vec![1.0, 1.0]).unwrap();
    let out = execute(&model, "x", &x, false, 2).unwrap().output;
    assert_eq!(out.as_f32().unwrap(), &[-1.0 + 0.25, 4.5 - 0.25]);

    // Misaligned offsets are rejected.
    let mut bad = manifest.clone();
    bad["initializers"][1]["offset"] = json!(16);
    fs::write(path.join("manifest.json"), serde_json::to_string(&bad).unwrap()).unwrap();
    assert!(load_model(&path).is_err());
}

#[test]
fn hand_written_nt_decodes() {
    let mut bytes = b"NTNS".to_vec();
    bytes.extend(1u32.to_le_bytes());
    bytes.push(0);
    bytes.push(2);
    bytes.extend(2u64.to_le_bytes());
    bytes.extend(1u64.to_le_bytes());
    bytes.extend(1.5f32.to_le_bytes());
    bytes.extend((-3.0f32).to_le_bytes());
    let t = decode_nt(&bytes, false).unwrap();
    assert_eq!(t.shape(), &[2, 1]);
    assert_eq!(t.as_f32().unwrap(), &[1.5, -3.0]);
    assert_eq!(encode_nt(&t), bytes);

    let mut wrong_magic = bytes.clone();
    wrong_magic[0] = b'X';
    assert!(matches!(decode_nt(&wrong_magic, false), Err(NmifError::MagicMismatch(_))));
    assert!(decode_nt(&bytes[..bytes.len() - 1], false).is_err());
    let mut nan = bytes.clone();
    let at = nan.len() - 4;
    nan[at..].copy_from_slice(&f32::NAN.to_le_bytes());
    assert!(decode_nt(&nan, false).is_err());
    assert!(decode_nt(&nan, true).is_ok());
}

/// Traces written by an external exporter (one `.nt` per node plus
/// `trace.json`) are read back in order and compare bitwise to our own.
#[test]
fn trace_directory_round_trip() {
    let model = smallcnn(11, SmallCnnOptions::default());
    let x = input_for(&model, 3);
    let trace = execute(&model, "img0", &x, true, 5).unwrap();
    let dir = tempfile::tempdir().unwrap();
    export_trace(&trace, dir.path()).unwrap();
    let back = import_trace(dir.path()).unwrap();
    assert_eq!(back.input_id, "img0");
    assert_eq!(back.top_k, trace.top_k);
    assert_eq!(back.entries.len(), model.nodes.len());
    for (a, b) in trace.entries.iter().zip(&back.entries) {
        assert_eq!(a.node_id, b.node_id);
        assert!(a.tensor.values().bit_eq(b.tensor.values()));
    }
    let first = read_nt(&dir.path().join("0000_conv1.nt"), false).unwrap();
    assert!(first.values().bit_eq(trace.entries[0].tensor.values()));

    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("trace.json")).unwrap()).unwrap();
    assert_eq!(manifest["order"][0]["node_id"], "conv1");
    assert_eq!(manifest["order"][0]["file"], "0000_conv1.nt");
}

#[test]
fn nhwc_container_declares_layout() {
    let nhwc = to_nhwc(&smallcnn(2, SmallCnnOptions::default())).unwrap();
    assert_eq!(nhwc.layout, Layout::Nhwc);
    assert_eq!(nhwc.inputs[0].shape, vec![1, 8, 8, 3]);
    assert_eq!(nhwc.inputs[0].dtype, DType::F32);
    let dir = tempfile::tempdir().unwrap();
    save_model(&nhwc, &dir.path().join("m.nmif")).unwrap();
    let text = fs::read_to_string(dir.path().join("m.nmif/manifest.json")).unwrap();
    assert!(text.contains("\"NHWC\""));
}
