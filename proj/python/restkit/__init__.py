# Copyright 2026 The ResT Kit Authors.
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

"""Efficient-attention vision backbone kit: model building, auditing, checks and benchmarks."""

from ._restkit import (
    DivisibilityError,
    FixedLengthError,
    Model,
    ShapeError,
    WeightFormatError,
    attention,
    audit,
    bench,
    build_model,
    count_macs,
    count_params,
    decode_weights,
    diversity,
    emsa_cost,
    encode_weights,
    forward,
    gradcheck,
    head_similarity,
    msa_cost,
    reference_figures,
    train_toy,
)

__all__ = [
    "DivisibilityError",
    "FixedLengthError",
    "Model",
    "ShapeError",
    "WeightFormatError",
    "attention",
    "audit",
    "bench",
    "build_model",
    "count_macs",
    "count_params",
    "decode_weights",
    "diversity",
    "emsa_cost",
    "encode_weights",
    "forward",
    "gradcheck",
    "head_similarity",
    "msa_cost",
    "reference_figures",
    "train_toy",
]
