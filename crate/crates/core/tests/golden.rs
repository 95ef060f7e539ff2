mod common;

use perception_program::text::{parse, serialize};

#[test]
fn every_modality_has_a_fixture() {
    let names: Vec<&str> = common::golden_programs().iter().map(|(n, _)| *n).collect();
    for m in perception_program::Modality::ALL {
        assert!(names.contains(&m.as_str()), "no fixture for {m}");
    }
}

#[test]
fn serialized_bytes_match_fixtures() {
    for (name, pp) in common::golden_programs() {
        assert_eq!(
            serialize(&pp).unwrap(),
            common::golden_text(name),
            "fixture {name}"
        );
    }
}

#[test]
fn fixtures_parse_to_quantized_programs() {
    for (name, pp) in common::golden_programs() {
        assert_eq!(
            parse(&common::golden_text(name)).unwrap(),
            pp.quantized(),
            "fixture {name}"
        );
    }
}
