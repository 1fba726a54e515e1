# Copyright 2026 The TPFL Authors
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#      http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

"""Trustworthy personalized federated learning."""

from tpfl._core import (
    SCHEMA_VERSION,
    DegenerateError,
    DomainError,
    Error,
    EvidentialModel,
    ExperimentConfig,
    Opinion,
    ParseError,
    ValidationError,
    __version__,
    compare_runs,
    digamma,
    dirichlet_from_opinion,
    expand_grid,
    expect_prob,
    fuse,
    fuse_many,
    kl_dirichlet,
    ln_gamma,
    load_config,
    opinion_from_dirichlet,
    opinion_from_evidence,
    parse_config,
    run_experiment,
    trigamma,
)

__all__ = [
    "SCHEMA_VERSION",
    "DegenerateError",
    "DomainError",
    "Error",
    "EvidentialModel",
    "ExperimentConfig",
    "Opinion",
    "ParseError",
    "ValidationError",
    "__version__",
    "compare_runs",
    "digamma",
    "dirichlet_from_opinion",
    "expand_grid",
    "expect_prob",
    "fuse",
    "fuse_many",
    "kl_dirichlet",
    "ln_gamma",
    "load_config",
    "opinion_from_dirichlet",
    "opinion_from_evidence",
    "parse_config",
    "run_experiment",
    "trigamma",
]
