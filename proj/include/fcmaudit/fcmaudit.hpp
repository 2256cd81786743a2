#pragma once

#include "fcmaudit/association.hpp"
#include "fcmaudit/audit.hpp"
#include "fcmaudit/csv.hpp"
#include "fcmaudit/dataset.hpp"
#include "fcmaudit/fcm.hpp"
#include "fcmaudit/forest.hpp"
#include "fcmaudit/matrix.hpp"
#include "fcmaudit/rng.hpp"
#include "fcmaudit/shapley.hpp"
