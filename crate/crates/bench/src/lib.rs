//! Shared fixtures for the engine benchmarks.

use ontoparse::learning::GoldOracle;
use ontoparse::memory::EpisodeRecord;
use ontoparse::model::{Dims, Model, Vocab};
use ontoparse::reader::{parse, ActionSource, ParseNn, ParseOutcome, ReaderConfig};
use ontoparse::reasoner::RuleSet;
use ontoparse::worldsim::{dynamic_rules, dynamic_schema, generate_dynamic, DynConfig};
use ontoparse::Schema;

pub struct Fixture {
    pub schema: Schema,
    pub rules: RuleSet,
    pub records: Vec<EpisodeRecord>,
    pub model: Model,
}

pub fn fixture(episodes: usize) -> Fixture {
    let schema = dynamic_schema();
    let rules = dynamic_rules();
    let cfg = DynConfig { min_sentences: 4, max_sentences: 8 };
    let records = generate_dynamic(&cfg, episodes, 1234);
    let vocab = Vocab::build(&records);
    let model = Model::new(schema.clone(), vocab, Dims::default(), 1).unwrap();
    Fixture { schema, rules, records, model }
}

/// One teacher-forced pass without the network: pure engine + rule work.
pub fn replay_symbolic(f: &Fixture, rec: &EpisodeRecord) -> ParseOutcome {
    let mut oracle = GoldOracle::new(&f.schema, &f.rules, rec).unwrap();
    let mut source = ActionSource::Oracle(&mut oracle);
    let cfg = ReaderConfig { nn: ParseNn::SymbolicOnly, ..ReaderConfig::default() };
    parse(&f.schema, &f.rules, None, None, rec, &cfg, &mut source).unwrap()
}

/// One greedy pass with full scoring.
pub fn parse_greedy(f: &Fixture, rec: &EpisodeRecord) -> ParseOutcome {
    let mut source = ActionSource::Greedy;
    let mut tape = ontoparse::nn::Tape::new();
    let cfg = ReaderConfig::default();
    parse(
        &f.schema,
        &f.rules,
        Some(&f.model),
        Some(&mut tape),
        rec,
        &cfg,
        &mut source,
    )
    .unwrap()
}
