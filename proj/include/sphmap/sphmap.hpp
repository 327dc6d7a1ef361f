#pragma once

#include "sphmap/core.hpp"
#include "sphmap/domain.hpp"
#include "sphmap/field.hpp"
#include "sphmap/sphere.hpp"
#include "sphmap/test_function.hpp"
#include "sphmap/jacobian.hpp"
#include "sphmap/connection.hpp"
#include "sphmap/surgery.hpp"
#include "sphmap/pipeline.hpp"
#include "sphmap/io.hpp"
