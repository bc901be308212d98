// Copyright 2026 The transduct Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Umbrella header.

#pragma once

#include "transduct/bench.hpp"
#include "transduct/error.hpp"
#include "transduct/io.hpp"
#include "transduct/kernel.hpp"
#include "transduct/linalg.hpp"
#include "transduct/loop.hpp"
#include "transduct/posterior.hpp"
#include "transduct/record.hpp"
#include "transduct/selection.hpp"
#include "transduct/theory.hpp"
