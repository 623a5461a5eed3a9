#pragma once

#include "steerpid/artifact_io.hpp"
#include "steerpid/control_vector.hpp"
#include "steerpid/error.hpp"
#include "steerpid/features_classifier.hpp"
#include "steerpid/harness.hpp"
#include "steerpid/inference_loop.hpp"
#include "steerpid/pid_controller.hpp"
#include "steerpid/reasoning_plant.hpp"
#include "steerpid/seeding.hpp"
#include "steerpid/trace_io.hpp"
#include "steerpid/vector_ops.hpp"
