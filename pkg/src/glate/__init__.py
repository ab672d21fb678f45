"""Grouped LATE estimation with clubs of judge instruments."""

from glate.ahc import MergePath, Partition, WeightedPoint, build_merge_path, cut
from glate.clubs import (
    ClubAssignment,
    PropensityProfile,
    drop_degenerate_clubs,
    estimate_propensities,
    partial_controls,
    select_clubs,
    select_clubs_grid,
)
from glate.data import CaseTable
from glate.errors import GlateError, NumericalError, ValidationError
from glate.late import (
    BiasInputs,
    ClubPair,
    ClubPairEstimate,
    GroupSelection,
    UnionSpec,
    enumerate_pairs,
    estimate_pair_median,
    estimate_pair_post_selection,
    estimate_pair_single,
    estimate_pair_union,
    select_valid_groups,
    select_valid_in_club,
    wald_bias,
)
from glate.regress import FitResult, RestrictionTest, TslsResult, f_test_restrictions, ols, partial_out, tsls, wald
from glate.simulate import McReport, OracleTable, SimDraw, SimScenario, draw, oracle_lates, run_monte_carlo, scenario_preset

__version__ = "0.1.0"
