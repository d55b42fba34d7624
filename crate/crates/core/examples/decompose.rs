//! Decomposition map of the toy vocabulary: a few entries, reduction counts,
//! filtering and the JSON round trip.

mod common;

use std::collections::BTreeSet;

use morphovoc::decomp::{build_map, filter_map, load_map, reduction_stats, serialize_map, BuildOptions};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    common::init_logging();
    let spec = common::small_spec();
    let (lex, _, vocab) = common::language(&spec);
    let built = build_map(&vocab, &lex, &BuildOptions::default());
    let map = built.map;
    println!("{} entries over {} transforms; skipped {:?}", map.len(), map.transforms().len(), built.skips);
    for d in map.entries().values().take(8) {
        println!("{:?} = {:?} + {}{}", d.surface, d.base, map.transform_set_label(&d.transforms), if d.in_vocab { "" } else { "  (oov)" });
    }
    let (removed, union) = reduction_stats(&map, &vocab);
    println!("removed {removed} of {} tokens, union size {union}", vocab.len());
    let drop: BTreeSet<String> = map.entries().keys().take(3).cloned().collect();
    let (filtered, warnings) = filter_map(&map, &drop, false);
    println!("filtered {:?}: {} entries left, {} warnings", drop, filtered.len(), warnings.len());
    let bytes = serialize_map(&map);
    assert_eq!(load_map(&bytes)?, map);
    println!("map json is {} bytes and round-trips", bytes.len());
    Ok(())
}
