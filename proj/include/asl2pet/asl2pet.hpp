/*
 * asl2pet: semi-supervised ASL/T1w to PET translation
 *
 * Copyright 2026 The asl2pet Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include "asl2pet/anova.hpp"
#include "asl2pet/checkpoint.hpp"
#include "asl2pet/common.hpp"
#include "asl2pet/datasets.hpp"
#include "asl2pet/evaluator.hpp"
#include "asl2pet/formats.hpp"
#include "asl2pet/layers.hpp"
#include "asl2pet/losses.hpp"
#include "asl2pet/model.hpp"
#include "asl2pet/optim.hpp"
#include "asl2pet/phantoms.hpp"
#include "asl2pet/slice.hpp"
#include "asl2pet/tensor.hpp"
#include "asl2pet/trainer.hpp"
