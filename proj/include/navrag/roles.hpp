#pragma once

// The 20 shipped user profiles. fixtures/roles.json holds the same records.

#include <vector>

#include "navrag/scene_model.hpp"

namespace navrag {

inline const std::vector<UserProfile>& default_profiles() {
  static const std::vector<UserProfile> profiles = {
      {"role_00", 33, "Female", "Lawyer",
       "You maintain the good habit of going to bed early and waking up early. Besides working in the study, you "
       "often do yoga and other exercises in the living room and enjoy cooking your own meals."},
      {"role_01", 68, "Male", "Retired teacher",
       "You wake up at dawn, water the plants, read the newspaper with a cup of tea and take a long nap after lunch. "
       "Your knees ache, so you ask for help carrying things."},
      {"role_02", 8, "Female", "Primary school student",
       "You come home from school in the afternoon, look for snacks, play with your toys in the living room and "
       "need reminders to do homework and brush your teeth."},
      {"role_03", 27, "Male", "Software engineer",
       "You work from home, spend long hours at the desk, forget to eat and like gadgets. In the evening you play "
       "video games and order takeaway."},
      {"role_04", 41, "Female", "Nurse",
       "You work night shifts, sleep during the day and keep the house quiet and tidy. You care a lot about hygiene "
       "and keep medicine well organized."},
      {"role_05", 35, "Male", "Chef",
       "You cook elaborate meals even on days off, keep spices and knives in strict order and host friends for "
       "dinner on weekends."},
      {"role_06", 22, "Female", "University student",
       "You study late at night, keep books and laptops everywhere, exercise in the morning and often lose track "
       "of your keys and chargers."},
      {"role_07", 52, "Male", "Accountant",
       "You follow a fixed schedule, sort documents in the study, watch the evening news and like a clean kitchen "
       "before bed."},
      {"role_08", 30, "Female", "Graphic designer",
       "You work with tablets and sketchbooks, love plants and natural light, and rearrange decorations "
       "frequently."},
      {"role_09", 45, "Male", "Firefighter",
       "You work long shifts, come home tired, lift weights in your spare time and check smoke detectors and "
       "appliances regularly."},
      {"role_10", 74, "Female", "Retired pianist",
       "You practise the piano every morning, knit in the afternoon, take several medicines a day and move slowly "
       "around the house."},
      {"role_11", 16, "Male", "High school student",
       "You sleep in on weekends, play the guitar, keep sports gear around and always look for food in the fridge."},
      {"role_12", 38, "Female", "Doctor",
       "You keep irregular hours, read medical journals at night, value quick healthy breakfasts and keep a first "
       "aid kit ready."},
      {"role_13", 29, "Male", "Fitness coach",
       "You train at home twice a day, prepare protein meals in the kitchen, track your sleep carefully and keep "
       "towels and water bottles everywhere."},
      {"role_14", 60, "Female", "Homemaker",
       "You manage the household, do laundry and cleaning in the morning, cook for the whole family and take care "
       "of the grandchildren in the afternoon."},
      {"role_15", 33, "Male", "Photographer",
       "You edit photos late into the night, keep camera gear in the bedroom closet and like to tidy the dining "
       "table for product shoots."},
      {"role_16", 25, "Female", "Barista",
       "You work early shifts, brew coffee at home, collect mugs and like to relax on the sofa with a book after "
       "work."},
      {"role_17", 48, "Male", "Architect",
       "You draw plans in the study, care about lighting and furniture placement, and cook simple dinners for your "
       "family."},
      {"role_18", 81, "Male", "Retired soldier",
       "You keep strict routines, polish your shoes every morning, take walks, and need help finding glasses and "
       "remote controls."},
      {"role_19", 36, "Female", "Writer",
       "You write at the desk in the morning, take tea breaks in the kitchen, read in bed and keep notebooks in "
       "many rooms."},
  };
  return profiles;
}

inline json default_profiles_json() {
  json j = json::array();
  for (const auto& p : default_profiles()) j.push_back(profile_to_json(p));
  return j;
}

}  // namespace navrag
