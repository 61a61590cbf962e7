//! The library against the independent implementations in `common`.

mod common;

use common::checks;

#[test]
fn integer_count_model_matches_textbook_kneser_ney() {
    checks::integer_count_model_matches_textbook_kneser_ney();
}

#[test]
fn chain_networks_give_the_text_model() {
    checks::chain_networks_give_the_text_model();
}

#[test]
fn poisson_binomial_matches_enumeration() {
    checks::poisson_binomial_matches_enumeration();
}

#[test]
fn wide_beam_is_exhaustive_and_narrow_beam_is_greedy() {
    checks::wide_beam_is_exhaustive_and_narrow_beam_is_greedy();
}

#[test]
fn single_group_diverse_search_is_beam_search() {
    checks::single_group_diverse_search_is_beam_search();
}

#[test]
fn networks_from_random_lists_are_valid_and_contain_every_hypothesis() {
    checks::networks_from_random_lists_are_valid_and_contain_every_hypothesis();
}

#[test]
fn gradients_match_finite_differences() {
    checks::gradients_match_finite_differences();
}

#[test]
fn gradients_match_extrapolated_differences() {
    checks::gradients_match_extrapolated_differences();
}

#[test]
fn uniform_models_have_vocabulary_size_perplexity() {
    checks::uniform_models_have_vocabulary_size_perplexity();
}

#[test]
fn perplexities_agree_with_direct_recomputation() {
    checks::perplexities_agree_with_direct_recomputation();
}
