/*
 * Copyright 2026 The pdir Authors.
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include "pdir/commands.hpp"
#include "pdir/config.hpp"
#include "pdir/core.hpp"
#include "pdir/evaluate.hpp"
#include "pdir/forest.hpp"
#include "pdir/imputer.hpp"
#include "pdir/kernel.hpp"
#include "pdir/linalg.hpp"
#include "pdir/rng.hpp"
#include "pdir/simulator.hpp"
#include "pdir/sir.hpp"
#include "pdir/survival.hpp"
