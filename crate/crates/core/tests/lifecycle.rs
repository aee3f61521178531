#[path = "support/lifecycle.rs"]
mod support;

use proptest::prelude::*;
use support::{adapt_case, adapt_inputs, engine_case, engine_inputs, refine_case, refine_inputs, CASES};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(CASES))]

    #[test]
    fn adapt_appends_only_and_bounds_checks(input in adapt_inputs()) {
        adapt_case(input)?;
    }

    #[test]
    fn refine_keeps_inadaptable_verbatim(input in refine_inputs()) {
        refine_case(input)?;
    }

    #[test]
    fn engine_never_thaws_or_rewrites_frozen_attributes(input in engine_inputs()) {
        engine_case(input)?;
    }
}
