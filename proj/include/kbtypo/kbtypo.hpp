#pragma once

#include "kbtypo/attack.hpp"
#include "kbtypo/builtin_model.hpp"
#include "kbtypo/common.hpp"
#include "kbtypo/config.hpp"
#include "kbtypo/corpus.hpp"
#include "kbtypo/keyboard.hpp"
#include "kbtypo/remote.hpp"
#include "kbtypo/report.hpp"
#include "kbtypo/sweep.hpp"
#include "kbtypo/typo.hpp"
#include "kbtypo/victim.hpp"
#include "kbtypo/wordpiece.hpp"
