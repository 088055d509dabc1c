// Copyright (C) 2026 The derain authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "derain/analysis.hpp"
#include "derain/attention_control.hpp"
#include "derain/block.hpp"
#include "derain/block_study.hpp"
#include "derain/checkpoint.hpp"
#include "derain/container.hpp"
#include "derain/denoiser.hpp"
#include "derain/guidance.hpp"
#include "derain/image_io.hpp"
#include "derain/inversion.hpp"
#include "derain/metrics.hpp"
#include "derain/pipeline.hpp"
#include "derain/run_config.hpp"
#include "derain/schedule.hpp"
#include "derain/synthetic_rain.hpp"
#include "derain/tensor.hpp"
#include "derain/text.hpp"
#include "derain/training.hpp"
