// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "priha/config.hpp"
#include "priha/corpus.hpp"
#include "priha/error.hpp"
#include "priha/eval.hpp"
#include "priha/factory.hpp"
#include "priha/mock.hpp"
#include "priha/pipeline.hpp"
#include "priha/providers.hpp"
#include "priha/query_optimizer.hpp"
#include "priha/reconciler.hpp"
#include "priha/rerank.hpp"
#include "priha/retrieval.hpp"
#include "priha/service.hpp"
#include "priha/session.hpp"
#include "priha/text.hpp"
#include "priha/web_agent.hpp"
