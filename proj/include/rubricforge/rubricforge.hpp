#pragma once

// Umbrella header: document-to-instance pipeline, rubric reward scoring,
// and the group-relative policy objective kernel.

#include "rubricforge/backend.hpp"
#include "rubricforge/config.hpp"
#include "rubricforge/core.hpp"
#include "rubricforge/dataops.hpp"
#include "rubricforge/digest.hpp"
#include "rubricforge/errors.hpp"
#include "rubricforge/grpo.hpp"
#include "rubricforge/grpo_serde.hpp"
#include "rubricforge/json_extract.hpp"
#include "rubricforge/mock_backend.hpp"
#include "rubricforge/pipeline.hpp"
#include "rubricforge/prompts.hpp"
#include "rubricforge/reward.hpp"
#include "rubricforge/runtime.hpp"
#include "rubricforge/strings.hpp"
