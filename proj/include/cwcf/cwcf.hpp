#pragma once

#include "cwcf/common.hpp"
#include "cwcf/io.hpp"
#include "cwcf/data.hpp"
#include "cwcf/net.hpp"
#include "cwcf/env.hpp"
#include "cwcf/budget.hpp"
#include "cwcf/agent.hpp"
#include "cwcf/trainer.hpp"
#include "cwcf/oracle.hpp"
#include "cwcf/evalx.hpp"
#include "cwcf/config.hpp"
#include "cwcf/commands.hpp"
