#pragma once

#include "igada/core.hpp"
#include "igada/dataset.hpp"
#include "igada/stats.hpp"
#include "igada/embed.hpp"
#include "igada/subprocess.hpp"
#include "igada/generators.hpp"
#include "igada/gcm.hpp"
#include "igada/models.hpp"
#include "igada/gap.hpp"
#include "igada/loop.hpp"
#include "igada/energy.hpp"
#include "igada/config.hpp"
