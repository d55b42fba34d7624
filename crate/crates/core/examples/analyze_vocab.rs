//! Redundancy of a vocabulary: whole-word tokens, case-folded types and
//! base forms. Uses the toy language, or a real tokenizer and UniMorph file
//! when MORPHOVOC_CL100K and MORPHOVOC_UNIMORPH_ENG are both set.

mod common;

use std::fs;

use morphovoc::decomp::{build_map, BuildOptions};
use morphovoc::lexicon::{parse_unimorph, ParseOptions};
use morphovoc::vocab::{load_vocab, redundancy_report, LetterSet, SpaceMarker, VocabFormat};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    common::init_logging();
    let (vocab, lex, letters) = match (std::env::var("MORPHOVOC_CL100K"), std::env::var("MORPHOVOC_UNIMORPH_ENG")) {
        (Ok(v), Ok(l)) => {
            let vocab = load_vocab(&fs::read(v)?, VocabFormat::Tiktoken, SpaceMarker::LiteralSpace)?;
            let lex = parse_unimorph(&fs::read(l)?, &ParseOptions::default())?;
            (vocab, lex, LetterSet::AsciiLetters)
        }
        _ => {
            let spec = common::small_spec();
            let (lex, _, vocab) = common::language(&spec);
            (vocab, lex, LetterSet::Alphabetic)
        }
    };
    let map = build_map(&vocab, &lex, &BuildOptions::default()).map;
    let report = redundancy_report(&vocab, &lex, &map, &letters)?;
    println!("{} tokens, {} lexicon entries", vocab.len(), lex.len());
    print!("{}", report.to_text());
    Ok(())
}
