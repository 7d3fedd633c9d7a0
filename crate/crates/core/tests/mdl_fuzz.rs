mod common;

use std::fs;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value as Json};

use sead::catalogue::builtin_registry;
use sead::diagnostic::has_errors;
use sead::mdl::{parse, serialize, validate, MdlDocument};

fn canonical_files() -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(common::root().join("catalogue"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.to_string_lossy().ends_with(".mdl.json"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

fn single_edit(rng: &mut ChaCha8Rng, bytes: &[u8]) -> Vec<u8> {
    const ALPHABET: &[u8] = b"0123456789abcdefABCDEFRSPLTW{}[]:,\" .-_$/\n";
    let mut out = bytes.to_vec();
    let at = rng.gen_range(0..out.len());
    let ch = ALPHABET[rng.gen_range(0..ALPHABET.len())];
    match rng.gen_range(0..3) {
        0 => out[at] = ch,
        1 => {
            out.remove(at);
        }
        _ => out.insert(at, ch),
    }
    out
}

#[test]
fn single_edits_never_change_meaning_silently() {
    let files = canonical_files();
    let registry = builtin_registry();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5EAD);
    let (mut rejected, mut equal, mut flagged) = (0, 0, 0);
    for case in 0..1000 {
        let (name, bytes) = &files[case % files.len()];
        let original = parse(bytes).unwrap();
        let edited = single_edit(&mut rng, bytes);
        match parse(&edited) {
            Err(_) => rejected += 1,
            Ok(doc) if doc == original => equal += 1,
            Ok(doc) => {
                let reg = registry.overlay([doc.clone()]);
                assert!(
                    has_errors(&validate(&doc, &reg)),
                    "case {case} on {name}: silent change\n{}",
                    String::from_utf8_lossy(&edited)
                );
                flagged += 1;
            }
        }
    }
    assert_eq!(rejected + equal + flagged, 1000);
    assert!(rejected > 0);
}

/// A catalogue document without its digest, with every number and
/// object key order open to variation.
fn stripped(name: &str) -> Json {
    let bytes = fs::read(common::root().join("catalogue").join(name)).unwrap();
    let mut v: Json = serde_json::from_slice(&bytes).unwrap();
    v.as_object_mut().unwrap().remove("digest");
    v
}

fn perturb(v: &mut Json, numbers: &mut impl Iterator<Item = f64>, reverse: bool) {
    match v {
        Json::Number(n) => {
            let x = n.as_f64().unwrap();
            if let Some(k) = numbers.next() {
                *v = json!((x * k).round().max(1.0));
            }
        }
        Json::Array(items) => items.iter_mut().for_each(|i| perturb(i, numbers, reverse)),
        Json::Object(map) => {
            let mut entries: Vec<(String, Json)> = std::mem::take(map).into_iter().collect();
            if reverse {
                entries.reverse();
            }
            for (_, e) in entries.iter_mut() {
                perturb(e, numbers, reverse);
            }
            map.extend(entries);
        }
        _ => {}
    }
}

fn generated(name: &str, factors: &[f64], reverse: bool) -> MdlDocument {
    let mut v = stripped(name);
    perturb(&mut v, &mut factors.iter().copied(), reverse);
    parse(serde_json::to_string_pretty(&v).unwrap().as_bytes()).expect("perturbed document parses")
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn parse_after_serialize_is_identity(
        pick in 0usize..14,
        factors in prop::collection::vec(0.5f64..3.0, 0..12),
        reverse in any::<bool>(),
    ) {
        let files = canonical_files();
        let doc = generated(&files[pick].0, &factors, reverse);
        let bytes = serialize(&doc);
        let again = parse(&bytes).expect("serialized document parses");
        prop_assert_eq!(&again, &doc);
        prop_assert_eq!(serialize(&again), bytes);
    }
}
