//! CSV rows to typed states: headers bind by normalized name or explicit map.

use indexmap::IndexMap;
use transduce::ingest::{from_csv, normalize_header};
use transduce::{RecordType, SlotSpec, TypeExpr};

fn main() {
    let survey = RecordType::new(
        "SurveyRow",
        vec![
            SlotSpec::new("region", TypeExpr::text()),
            SlotSpec::new("respondent_id", TypeExpr::text()),
            SlotSpec::new("satisfaction_score", TypeExpr::real()),
            SlotSpec::new("would_recommend", TypeExpr::boolean()),
            SlotSpec::new("comment", TypeExpr::text()).optional(),
        ],
    )
    .unwrap();

    let csv = "Region,Respondent ID,Satisfaction Score,Would Recommend,Comment\n\
               north,r1,8,yes,fast delivery\n\
               south,r2,6.5,no,\n";
    for header in ["Respondent ID", "Satisfaction Score"] {
        println!("{header:?} -> {:?}", normalize_header(header));
    }
    for row in from_csv(csv.as_bytes(), &survey, None).unwrap() {
        println!("{}", row.to_json());
    }

    let renamed = "area,id,score,rec\nwest,r3,9,1\n";
    let map: IndexMap<String, String> = [("area", "region"), ("id", "respondent_id"), ("score", "satisfaction_score"), ("rec", "would_recommend")]
        .into_iter()
        .map(|(c, s)| (c.to_string(), s.to_string()))
        .collect();
    println!("{}", from_csv(renamed.as_bytes(), &survey, Some(&map)).unwrap()[0].to_json());

    let broken = "region,respondent_id,satisfaction_score,would_recommend\neast,r4,very,yes\n";
    println!("error: {}", from_csv(broken.as_bytes(), &survey, None).unwrap_err());
}
